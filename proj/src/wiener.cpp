#include "ulw/wiener.hpp"

#include <cmath>

#include <fmt/format.h>

#include "ulw/errors.hpp"
#include "ulw/gradcheck.hpp"
#include "ulw/ops.hpp"

namespace ulw::wiener {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw ParameterError(fmt::format("softplus inverse needs a positive value, got {}", y));
  return y + std::log(-std::expm1(-y));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

WienerParams init_wiener(int kernel_size, std::size_t channels, double gaussian_std, double sigma2_init,
                         double epsilon) {
  if (kernel_size < 3 || kernel_size % 2 == 0) {
    throw ParameterError(fmt::format("Wiener kernel size must be odd and >= 3, got {}", kernel_size));
  }
  if (!(gaussian_std > 0.0)) throw ParameterError("Wiener Gaussian std must be positive");
  if (!(sigma2_init > 0.0)) throw ParameterError("initial noise variance must be positive");
  if (!(epsilon > 0.0)) throw ParameterError("Wiener epsilon must be positive");
  if (channels == 0) throw ParameterError("Wiener layer needs at least one channel");

  const auto taps = ops::gaussian_taps(kernel_size, gaussian_std);
  const auto k = static_cast<std::size_t>(kernel_size);
  WienerParams p;
  p.kernel = Tensor(Shape{channels, 1, k, k});
  for (std::size_t c = 0; c < channels; ++c) {
    double* w = p.kernel.plane(c, 0);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) w[i * k + j] = taps[i] * taps[j];
    }
  }
  p.sigma2_raw = softplus_inverse(sigma2_init);
  p.epsilon = epsilon;
  return p;
}

namespace {

void check_channels(const WienerParams& params, const Tensor& x) {
  if (x.shape().c != params.channels()) {
    throw DimensionError(fmt::format("Wiener layer has {} channels, input {} has {}", params.channels(),
                                     x.shape().str(), x.shape().c));
  }
}

}  // namespace

Tensor wiener_forward(const WienerParams& params, const Tensor& x, Tensor* filtered) {
  check_channels(params, x);
  Tensor s = ops::depthwise_conv_reflect(x, params.kernel);
  const double a = params.sigma2() + params.epsilon;
  Tensor out(s.shape());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double p = s[i] * s[i];
    out[i] = s[i] * (p / (p + a));
  }
  if (filtered) *filtered = std::move(s);
  return out;
}

Tensor wiener_gate(const WienerParams& params, const Tensor& x) {
  check_channels(params, x);
  Tensor g = ops::depthwise_conv_reflect(x, params.kernel);
  const double a = params.sigma2() + params.epsilon;
  for (double& v : g.values()) {
    const double p = v * v;
    v = p / (p + a);
  }
  return g;
}

// out = s^3 / (s^2 + a),  a = softplus(raw) + eps
//   d out / d s   = s^2 (s^2 + 3a) / (s^2 + a)^2
//   d out / d raw = -s^3 / (s^2 + a)^2 * sigmoid(raw)
Tensor wiener_backward(const WienerParams& params, const Tensor& x, const Tensor& filtered, const Tensor& dy,
                       WienerGrads& grads) {
  check_channels(params, x);
  const double a = params.sigma2() + params.epsilon;
  Tensor ds(filtered.shape());
  double d_var = 0.0;
  for (std::size_t i = 0; i < filtered.size(); ++i) {
    const double s = filtered[i];
    const double p = s * s;
    const double den = (p + a) * (p + a);
    ds[i] = dy[i] * p * (p + 3.0 * a) / den;
    d_var -= dy[i] * p * s / den;
  }
  grads.sigma2_raw += d_var * sigmoid(params.sigma2_raw);
  return ops::depthwise_conv_reflect_backward(x, params.kernel, ds, grads.kernel);
}

double wiener_gradcheck(const WienerParams& params, const Tensor& x, const Tensor& projection, double step) {
  require_same_shape(x, projection, "wiener_gradcheck");
  WienerParams work = params;
  auto loss = [&] {
    const Tensor out = wiener_forward(work, x);
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += projection[i] * out[i];
    return acc;
  };
  Tensor s;
  wiener_forward(work, x, &s);
  WienerGrads g(work);
  wiener_backward(work, x, s, projection, g);

  double worst = 0.0;
  for (std::size_t i = 0; i < work.kernel.size(); ++i) {
    const double numeric = gradcheck::central_difference(loss, work.kernel[i], step);
    worst = std::max(worst, gradcheck::relative_error(g.kernel[i], numeric));
  }
  const double numeric = gradcheck::central_difference(loss, work.sigma2_raw, step);
  return std::max(worst, gradcheck::relative_error(g.sigma2_raw, numeric));
}

}  // namespace ulw::wiener
