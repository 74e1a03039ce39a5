#pragma once

#include <cstddef>
#include <cstdint>

#include "ulw/tensor.hpp"

// Learnable Wiener gating layer:
//
//   s = F(x)                       depthwise k x k filter, reflect padding
//   out = s * p / (p + var + eps)  with p = s^2 and var = softplus(sigma2_raw)
//
// The gate p / (p + var + eps) lies in [0, 1): it passes strong local signal
// and suppresses weak signal. Both the filter taps and sigma2_raw are trained.
namespace ulw::wiener {

double softplus(double x);
/// Inverse of softplus on (0, inf).
double softplus_inverse(double y);
double sigmoid(double x);

struct WienerParams {
  Tensor kernel;  // (C, 1, k, k)
  double sigma2_raw = 0.0;
  double epsilon = 1e-6;

  double sigma2() const { return softplus(sigma2_raw); }
  std::size_t channels() const { return kernel.shape().n; }
  std::size_t kernel_size() const { return kernel.shape().h; }
};

/// Gaussian-initialised filter (each channel sums to 1) and
/// sigma2_raw = softplus^-1(sigma2_init). Throws ParameterError.
WienerParams init_wiener(int kernel_size, std::size_t channels, double gaussian_std, double sigma2_init,
                         double epsilon = 1e-6);

/// Gated output; when `filtered` is non-null it receives s for the backward pass.
Tensor wiener_forward(const WienerParams& params, const Tensor& x, Tensor* filtered = nullptr);

/// The gate map p / (p + var + eps) for input x.
Tensor wiener_gate(const WienerParams& params, const Tensor& x);

struct WienerGrads {
  Tensor kernel;
  double sigma2_raw = 0.0;
  explicit WienerGrads(const WienerParams& p) : kernel(p.kernel.shape()) {}
};

/// Accumulates parameter gradients into `grads` and returns dL/dx.
/// `filtered` is the s produced by wiener_forward on the same x.
Tensor wiener_backward(const WienerParams& params, const Tensor& x, const Tensor& filtered, const Tensor& dy,
                       WienerGrads& grads);

/// Central-difference check of every kernel weight and sigma2_raw under the
/// reduction L = sum(projection * out). Returns the largest
/// |analytic - numeric| / max(1e-8, |numeric|).
double wiener_gradcheck(const WienerParams& params, const Tensor& x, const Tensor& projection, double step = 1e-4);

}  // namespace ulw::wiener
