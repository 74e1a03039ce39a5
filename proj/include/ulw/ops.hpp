#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "ulw/tensor.hpp"

// Differentiable building blocks with hand-written backward passes. Forward
// functions are pure; backward functions accumulate parameter gradients into
// caller-owned tensors and return the input gradient.
namespace ulw::ops {

/// Sampled, normalised 1-D Gaussian of odd length `size`.
std::vector<double> gaussian_taps(int size, double sigma);

/// Separable filter with the outer product of `taps`, valid region only:
/// (h, w) -> (h - k + 1, w - k + 1).
void valid_filter(const double* in, std::size_t h, std::size_t w, const std::vector<double>& taps, double* out);

/// Adjoint of valid_filter: (h - k + 1, w - k + 1) -> (h, w), overwriting `out`.
void valid_filter_adjoint(const double* grad, std::size_t h, std::size_t w, const std::vector<double>& taps,
                          double* out);

struct ConvGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
  std::size_t out_extent(std::size_t in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

/// Zero-padded cross-correlation. x: (N, Cin, H, W), weight: (Cout, Cin, k, k),
/// bias: (1, Cout, 1, 1) or nullptr.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, ConvGeometry g);

/// Adds dL/dweight into `dweight` (and dL/dbias into `dbias` when non-null).
/// Returns dL/dx, or an empty tensor when `need_dx` is false.
Tensor conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, ConvGeometry g, Tensor& dweight,
                       Tensor* dbias, bool need_dx = true);

/// 2x2, stride-2 transposed convolution. weight: (Cin, Cout, 2, 2), bias: (1, Cout, 1, 1).
Tensor conv_transpose2x2(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor conv_transpose2x2_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, Tensor& dweight,
                                  Tensor& dbias);

/// 2x2, stride-2 max pooling; `argmax` receives the winning in-plane offset
/// of every output element (first maximum on ties).
Tensor max_pool2x2(const Tensor& x, std::vector<std::uint32_t>& argmax);
Tensor max_pool2x2_backward(const Tensor& dy, const std::vector<std::uint32_t>& argmax, const Shape& x_shape);

enum class Activation { relu, leaky_relu };
Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation a);

Tensor activate(const Tensor& pre, Activation a);
/// `pre` is the forward input.
Tensor activate_backward(const Tensor& pre, const Tensor& dy, Activation a);

/// Channel concatenation [a, b] and its gradient split.
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& d, std::size_t channels_a, Tensor& da, Tensor& db);

/// Reflect index (edge pixel not repeated); requires -n < i < 2n - 1.
inline std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto m = static_cast<std::ptrdiff_t>(n);
  if (i < 0) i = -i;
  if (i >= m) i = 2 * m - 2 - i;
  return static_cast<std::size_t>(i);
}

/// Per-channel k x k cross-correlation with reflect padding, stride 1,
/// same-size output. kernel: (C, 1, k, k), k odd, k / 2 < min(H, W).
Tensor depthwise_conv_reflect(const Tensor& x, const Tensor& kernel);
Tensor depthwise_conv_reflect_backward(const Tensor& x, const Tensor& kernel, const Tensor& dy, Tensor& dkernel);

}  // namespace ulw::ops
