#include "ldaprune/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "ldaprune/error.hpp"

namespace ldaprune {

using nlohmann::json;

namespace {

constexpr std::size_t kMagicBytes = sizeof kModelMagic;
constexpr std::size_t kPreambleBytes = kMagicBytes + 8;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_floats(std::vector<std::uint8_t>& out, std::span<const float> values) {
  for (float f : values) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
}

json tensor_entry(const Tensor& t, std::size_t& offset) {
  json entry = {{"offset", offset}, {"shape", t.shape()}};
  offset += t.size() * sizeof(float);
  return entry;
}

json layer_json(const Layer& layer, std::size_t& offset) {
  const LayerSpec& s = layer.spec;
  json j = {{"kind", std::string(to_string(s.kind))}};
  switch (s.kind) {
    case LayerKind::Conv:
      j["out_channels"] = s.conv.out_channels;
      j["in_channels"] = s.conv.in_channels;
      j["kernel_h"] = s.conv.kernel_h;
      j["kernel_w"] = s.conv.kernel_w;
      j["stride"] = s.conv.stride;
      j["pad"] = s.conv.pad;
      break;
    case LayerKind::MaxPool:
      j["window"] = s.pool.window;
      j["stride"] = s.pool.stride;
      break;
    case LayerKind::Dense:
      j["out_dim"] = s.dense.out_dim;
      j["in_dim"] = s.dense.in_dim;
      break;
    default:
      break;
  }
  if (s.has_params()) {
    j["weight"] = tensor_entry(layer.weight, offset);
    j["bias"] = tensor_entry(layer.bias, offset);
  }
  return j;
}

json header_of(const ModelDescriptor& model) {
  std::size_t offset = 0;
  json layers = json::array();
  for (const Layer& layer : model.layers) layers.push_back(layer_json(layer, offset));
  json aux = json::array();
  for (const AuxSection& section : model.aux) {
    aux.push_back({{"kind", section.kind}, {"offset", offset}, {"bytes", section.blob.size()}});
    offset += section.blob.size();
  }
  return {{"format_version", model.format_version},
          {"input_shape", model.input_shape},
          {"provenance", model.provenance},
          {"layers", std::move(layers)},
          {"aux", std::move(aux)},
          {"blob_bytes", offset}};
}

template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) fail(ErrorKind::Format, std::string("header missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("header field '") + key + "': " + e.what());
  }
}

Tensor read_tensor(const json& entry, const Shape& declared, const std::uint8_t* blob,
                   std::size_t blob_bytes) {
  const auto offset = field<std::size_t>(entry, "offset");
  const auto shape = field<Shape>(entry, "shape");
  require(shape == declared, ErrorKind::Dimension,
          "stored tensor shape " + shape_to_string(shape) + " != declared " +
              shape_to_string(declared));
  const std::size_t count = shape_numel(shape);
  require(offset + count * sizeof(float) <= blob_bytes, ErrorKind::Truncated,
          "tensor data runs past the end of the file");
  std::vector<float> values(count);
  const std::uint8_t* p = blob + offset;
  for (std::size_t i = 0; i < count; ++i, p += 4) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
    values[i] = std::bit_cast<float>(bits);
  }
  return Tensor(shape, std::move(values));
}

LayerSpec spec_from_json(const json& j) {
  LayerSpec s;
  s.kind = layer_kind_from_string(field<std::string>(j, "kind"));
  switch (s.kind) {
    case LayerKind::Conv:
      s.conv = {field<int>(j, "out_channels"), field<int>(j, "in_channels"),
                field<int>(j, "kernel_h"),     field<int>(j, "kernel_w"),
                field<int>(j, "stride"),       field<int>(j, "pad")};
      break;
    case LayerKind::MaxPool:
      s.pool = {field<int>(j, "window"), field<int>(j, "stride")};
      break;
    case LayerKind::Dense:
      s.dense = {field<int>(j, "out_dim"), field<int>(j, "in_dim")};
      break;
    default:
      break;
  }
  return s;
}

}  // namespace

std::string model_header_json(const ModelDescriptor& model) { return header_of(model).dump(); }

std::vector<std::uint8_t> serialize_model(const ModelDescriptor& model) {
  validate_model(model);
  const std::string header = model_header_json(model);
  std::vector<std::uint8_t> out(kModelMagic, kModelMagic + kMagicBytes);
  put_u64(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  for (const Layer& layer : model.layers) {
    if (!layer.spec.has_params()) continue;
    put_floats(out, layer.weight.data());
    put_floats(out, layer.bias.data());
  }
  for (const AuxSection& section : model.aux)
    out.insert(out.end(), section.blob.begin(), section.blob.end());
  return out;
}

ModelDescriptor deserialize_model(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= kMagicBytes &&
              std::memcmp(bytes.data(), kModelMagic, kMagicBytes) == 0,
          ErrorKind::BadMagic, "bad magic: not an LDAP1 model file");
  require(bytes.size() >= kPreambleBytes, ErrorKind::Truncated, "truncated header length");
  const std::uint64_t header_bytes = get_u64(bytes.data() + kMagicBytes);
  require(header_bytes <= bytes.size() - kPreambleBytes, ErrorKind::Truncated,
          "truncated header");
  const std::string header_text(bytes.begin() + kPreambleBytes,
                                bytes.begin() + static_cast<std::ptrdiff_t>(kPreambleBytes +
                                                                              header_bytes));
  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("malformed header: ") + e.what());
  }
  const std::uint8_t* blob = bytes.data() + kPreambleBytes + header_bytes;
  const std::size_t available = bytes.size() - kPreambleBytes - header_bytes;
  const auto blob_bytes = field<std::size_t>(header, "blob_bytes");
  require(available >= blob_bytes, ErrorKind::Truncated,
          "truncated blob: expected " + std::to_string(blob_bytes) + " bytes, found " +
              std::to_string(available));
  require(available == blob_bytes, ErrorKind::Format, "trailing bytes after model blob");

  ModelDescriptor model;
  model.format_version = field<int>(header, "format_version");
  require(model.format_version == ModelDescriptor::kFormatVersion, ErrorKind::Format,
          "unsupported format version " + std::to_string(model.format_version));
  model.input_shape = field<Shape>(header, "input_shape");
  model.provenance = field<std::string>(header, "provenance");
  for (const json& lj : field<json>(header, "layers")) {
    Layer layer{spec_from_json(lj), {}, {}};
    if (layer.spec.has_params()) {
      for (int e : layer.spec.weight_shape())
        require(e >= 1, ErrorKind::Format, "non-positive layer extent in header");
      layer.weight = read_tensor(field<json>(lj, "weight"), layer.spec.weight_shape(), blob,
                                 blob_bytes);
      layer.bias =
          read_tensor(field<json>(lj, "bias"), layer.spec.bias_shape(), blob, blob_bytes);
    }
    model.layers.push_back(std::move(layer));
  }
  for (const json& aj : field<json>(header, "aux")) {
    const auto offset = field<std::size_t>(aj, "offset");
    const auto size = field<std::size_t>(aj, "bytes");
    require(offset + size <= blob_bytes, ErrorKind::Truncated, "aux section past end of blob");
    model.aux.push_back({field<std::string>(aj, "kind"),
                         std::vector<std::uint8_t>(blob + offset, blob + offset + size)});
  }
  validate_model(model);
  return model;
}

void save_model(const ModelDescriptor& model, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::Io, "write failed: " + path.string());
}

ModelDescriptor load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace ldaprune
