#include "ulw/tensor.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "ulw/errors.hpp"

namespace ulw {

std::string Shape::str() const { return fmt::format("{}x{}x{}x{}", n, c, h, w); }

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw DimensionError(fmt::format("tensor data has {} values, shape {} needs {}", data_.size(),
                                     shape_.str(), shape_.size()));
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::slice(std::size_t first, std::size_t count) const {
  if (first + count > shape_.n) {
    throw DimensionError(fmt::format("slice [{}, {}) outside batch of {}", first, first + count, shape_.n));
  }
  Shape s = shape_;
  s.n = count;
  const std::size_t per = shape_.c * shape_.plane();
  return Tensor(s, std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(first * per),
                                       data_.begin() + static_cast<std::ptrdiff_t>((first + count) * per)));
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw DimensionError("cannot stack an empty list of tensors");
  Shape s = items.front().shape();
  s.n = 0;
  for (const auto& t : items) {
    const Shape& o = t.shape();
    if (o.c != s.c || o.h != s.h || o.w != s.w) {
      throw DimensionError(fmt::format("cannot stack {} with {}", o.str(), items.front().shape().str()));
    }
    s.n += o.n;
  }
  std::vector<double> data;
  data.reserve(s.size());
  for (const auto& t : items) data.insert(data.end(), t.values().begin(), t.values().end());
  return Tensor(s, std::move(data));
}

void check_image_batch(const Tensor& t) {
  if (t.shape().c != 3) {
    throw FormatError(fmt::format("image batch must have 3 channels, got {}", t.shape().c));
  }
  for (double v : t.values()) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw FormatError(fmt::format("image batch value {} outside [0, 1]", v));
    }
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(fmt::format("{}: shape mismatch {} vs {}", what, a.shape().str(), b.shape().str()));
  }
}

}  // namespace ulw
