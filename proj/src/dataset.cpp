#include "ldaprune/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "ldaprune/error.hpp"

namespace ldaprune {

std::size_t DatasetSplit::class_count(int label) const {
  return static_cast<std::size_t>(std::count_if(
      train.begin(), train.end(), [label](const LabeledImage& x) { return x.label == label; }));
}

namespace {

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int integer(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(rng_() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  double normal() {  // Box-Muller
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  std::mt19937_64 rng_;
};

Tensor draw_image(Sampler& s, int size, int label, double sigma) {
  Tensor img({1, size, size});
  const double cx = s.uniform(0.35, 0.65) * size, cy = s.uniform(0.35, 0.65) * size;
  const double rx = s.uniform(0.18, 0.3) * size, ry = s.uniform(0.18, 0.3) * size;
  const double fill = s.uniform(0.35, 0.55);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
      if (dx * dx + dy * dy <= 1.0) img.at(0, y, x) = static_cast<float>(fill);
    }

  const int strokes = s.integer(2, 4);
  for (int k = 0; k < strokes; ++k) {
    const int length = static_cast<int>(s.uniform(0.3, 0.6) * size);
    const int thickness = s.integer(1, 2);
    const int along = s.integer(0, size - length);
    const int across = s.integer(1, size - 1 - thickness);
    const float value = static_cast<float>(s.uniform(0.85, 1.0));
    for (int t = 0; t < thickness; ++t)
      for (int p = along; p < along + length; ++p) {
        float& px = label == 0 ? img.at(0, across + t, p) : img.at(0, p, across + t);
        px = std::max(px, value);
      }
  }

  for (float& v : img.data())
    v = static_cast<float>(std::clamp(v + sigma * s.normal(), 0.0, 1.0));
  return img;
}

std::size_t train_quota(std::size_t n) {
  return std::min(n, std::max<std::size_t>(2, n * 4 / 5));
}

// Per-class lists in id order -> interleaved train/test lists.
DatasetSplit split_classes(std::vector<LabeledImage> class0, std::vector<LabeledImage> class1) {
  DatasetSplit split;
  const std::size_t q0 = train_quota(class0.size()), q1 = train_quota(class1.size());
  auto interleave = [](std::vector<LabeledImage>& out, std::vector<LabeledImage>& a,
                       std::size_t a0, std::size_t a1, std::vector<LabeledImage>& b,
                       std::size_t b0, std::size_t b1) {
    for (std::size_t i = 0; a0 + i < a1 || b0 + i < b1; ++i) {
      if (a0 + i < a1) out.push_back(std::move(a[a0 + i]));
      if (b0 + i < b1) out.push_back(std::move(b[b0 + i]));
    }
  };
  interleave(split.train, class0, 0, q0, class1, 0, q1);
  interleave(split.test, class0, q0, class0.size(), class1, q1, class1.size());
  return split;
}

}  // namespace

DatasetSplit generate_synthetic(const SyntheticConfig& config) {
  require(config.size >= 16, ErrorKind::InvalidArgument,
          "synthetic image size must be >= 16, got " + std::to_string(config.size));
  require(config.n_per_class >= 2, ErrorKind::InvalidArgument, "n_per_class must be >= 2");
  Sampler sampler(config.seed);
  std::vector<LabeledImage> classes[2];
  char id[48];
  for (int i = 0; i < config.n_per_class; ++i) {
    for (int label = 0; label < 2; ++label) {
      std::snprintf(id, sizeof id, "syn-%d-%05d", label, i);
      classes[label].push_back(
          {draw_image(sampler, config.size, label, config.noise_sigma), label, id});
    }
  }
  return split_classes(std::move(classes[0]), std::move(classes[1]));
}

namespace {

std::string next_token(std::istream& in) {
  std::string token;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {}
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
  return token;
}

int parse_extent(const std::string& token, const std::string& what,
                 const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(token, &used);
    if (used == token.size() && v > 0) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::Format, path.string() + ": unreadable " + what + " '" + token + "'");
}

}  // namespace

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  const std::string magic = next_token(in);
  require(magic == "P5", ErrorKind::Format,
          path.string() + ": expected binary PGM (P5), found '" + magic + "'");
  const int width = parse_extent(next_token(in), "width", path);
  const int height = parse_extent(next_token(in), "height", path);
  const int maxval = parse_extent(next_token(in), "maxval", path);
  require(maxval == 255, ErrorKind::Format,
          path.string() + ": only maxval 255 is supported, got " + std::to_string(maxval));
  std::vector<unsigned char> bytes(static_cast<std::size_t>(width) * height);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<std::size_t>(in.gcount()) == bytes.size(), ErrorKind::Truncated,
          path.string() + ": pixel data truncated");
  Tensor img({1, height, width});
  for (std::size_t i = 0; i < bytes.size(); ++i) img[i] = static_cast<float>(bytes[i]) / 255.0f;
  return img;
}

Tensor resize_nearest(const Tensor& image, int height, int width) {
  require(image.rank() == 3 && height >= 1 && width >= 1, ErrorKind::Dimension,
          "resize expects a (C,H,W) image and positive target extents");
  const int channels = image.dim(0), src_h = image.dim(1), src_w = image.dim(2);
  Tensor out({channels, height, width});
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        out.at(c, y, x) = image.at(c, static_cast<int>(static_cast<long>(y) * src_h / height),
                                   static_cast<int>(static_cast<long>(x) * src_w / width));
  return out;
}

DatasetSplit load_pgm_dir(const std::filesystem::path& root, int size) {
  namespace fs = std::filesystem;
  require(size >= 1, ErrorKind::InvalidArgument, "target size must be positive");
  std::vector<LabeledImage> classes[2];
  for (int label = 0; label < 2; ++label) {
    const fs::path dir = root / std::to_string(label);
    require(fs::is_directory(dir), ErrorKind::Io, "missing class directory " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file()) files.push_back(entry.path());
    require(!files.empty(), ErrorKind::InvalidArgument, "class directory " + dir.string() +
                                                            " is empty");
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
    for (const fs::path& file : files) {
      Tensor img = read_pgm(file);
      if (img.dim(1) != size || img.dim(2) != size) img = resize_nearest(img, size, size);
      classes[label].push_back(
          {std::move(img), label, std::to_string(label) + "/" + file.filename().string()});
    }
  }
  return split_classes(std::move(classes[0]), std::move(classes[1]));
}

}  // namespace ldaprune
