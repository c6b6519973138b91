#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ldaprune/tensor.hpp"

namespace ldaprune {

struct LabeledImage {
  Tensor image;  // (1,H,W), values in [0,1]
  int label = 0;
  std::string id;
};

struct DatasetSplit {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> test;

  std::size_t class_count(int label) const;  // over the training split
};

struct SyntheticConfig {
  int n_per_class = 300;
  int size = 32;
  std::uint64_t seed = 1;
  double noise_sigma = 0.05;
};

// Class 0: filled ellipse plus 2-4 horizontal bright strokes. Class 1: the same
// ellipse distribution plus vertical strokes. 80/20 train/test split per class by id
// order, with at least two training images per class.
DatasetSplit generate_synthetic(const SyntheticConfig& config);

// Single binary PGM (P5, maxval 255), scaled to [0,1].
Tensor read_pgm(const std::filesystem::path& path);
// Nearest-neighbour resize of a (1,H,W) image: source index = floor(dst * src / dst_extent).
Tensor resize_nearest(const Tensor& image, int height, int width);
// `root/0/*.pgm` and `root/1/*.pgm`, resized to size x size, 80/20 split by sorted filename.
DatasetSplit load_pgm_dir(const std::filesystem::path& root, int size);

}  // namespace ldaprune
