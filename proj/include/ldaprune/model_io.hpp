#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ldaprune/model.hpp"

namespace ldaprune {

// LDAP1 container:
//   bytes 0..4   "LDAP1"
//   bytes 5..12  header length, uint64 little-endian
//   header       JSON text: layer specs, tensor byte offsets/shapes, aux sections
//   blob         float32 little-endian tensor data, then raw aux payloads
inline constexpr char kModelMagic[5] = {'L', 'D', 'A', 'P', '1'};

std::vector<std::uint8_t> serialize_model(const ModelDescriptor& model);
ModelDescriptor deserialize_model(const std::vector<std::uint8_t>& bytes);

void save_model(const ModelDescriptor& model, const std::filesystem::path& path);
ModelDescriptor load_model(const std::filesystem::path& path);

// The JSON header exactly as it is written into the container.
std::string model_header_json(const ModelDescriptor& model);

}  // namespace ldaprune
