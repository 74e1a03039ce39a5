#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ulw {

/// Extents of a rank-4 NCHW array.
struct Shape {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  std::size_t size() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense rank-4 array of doubles in NCHW order.
///
/// Images, feature maps, parameters and their gradients all live in this one
/// container. Parameters that are not naturally 4-D (biases, scalars) use
/// leading unit extents.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }

  /// Pointer to the (n, c) image plane.
  double* plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
  const double* plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }
  /// Pointer to the first channel of sample n.
  double* sample(std::size_t n) { return plane(n, 0); }
  const double* sample(std::size_t n) const { return plane(n, 0); }

  void fill(double v);
  /// Copy of samples [first, first + count).
  Tensor slice(std::size_t first, std::size_t count) const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

/// Concatenate along the batch axis. All inputs share C, H, W.
Tensor stack(std::span<const Tensor> items);

/// An ImageBatch is a Tensor with three channels and values in [0, 1].
using ImageBatch = Tensor;

/// Throws FormatError unless `t` has 3 channels and finite values in [0, 1].
void check_image_batch(const Tensor& t);

/// Throws DimensionError when the shapes differ; `what` prefixes the message.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace ulw
