#include "ldaprune/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "ldaprune/error.hpp"

namespace ldaprune {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Config: return "config";
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::Io: return "io";
    case ErrorKind::BadMagic: return "bad_magic";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::ShapeChain: return "shape_chain";
    case ErrorKind::Format: return "format";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Convergence: return "convergence";
  }
  return "unknown";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int extent : shape) n *= static_cast<std::size_t>(extent);
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

static void check_extents(const Shape& shape) {
  for (int extent : shape)
    require(extent >= 1, ErrorKind::Dimension,
            "tensor extents must be positive, got " + shape_to_string(shape));
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  require(shape_numel(shape_) == data_.size(), ErrorKind::Dimension,
          "tensor shape " + shape_to_string(shape_) + " needs " +
              std::to_string(shape_numel(shape_)) + " values, got " +
              std::to_string(data_.size()));
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

}  // namespace ldaprune
