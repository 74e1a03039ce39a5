#include "ulw/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "ulw/losses.hpp"
#include "ulw/network.hpp"
#include "ulw/rng.hpp"
#include "ulw/wiener.hpp"

namespace ulw::gradcheck {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(numeric));
}

double central_difference(const std::function<double()>& f, double& value, double step) {
  const double saved = value;
  value = saved + step;
  const double up = f();
  value = saved - step;
  const double down = f();
  value = saved;
  return (up - down) / (2.0 * step);
}

namespace {

constexpr double kStep = 1e-4;

Tensor uniform_tensor(Shape s, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor t(s);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

metrics::SSIMConfig small_window() {
  metrics::SSIMConfig cfg;
  cfg.window_size = 7;
  return cfg;
}

CheckResult check_input_gradient(std::string name, Tensor pred, const std::function<double(const Tensor&, Tensor*)>& loss) {
  Tensor analytic;
  loss(pred, &analytic);
  CheckResult r{std::move(name), 0.0, pred.size()};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double numeric = central_difference([&] { return loss(pred, nullptr); }, pred[i], kStep);
    r.max_relative_error = std::max(r.max_relative_error, relative_error(analytic[i], numeric));
  }
  return r;
}

}  // namespace

CheckResult check_wiener(std::uint64_t seed) {
  Rng rng(seed);
  wiener::WienerParams p = wiener::init_wiener(5, 3, 1.0, 0.01);
  for (double& v : p.kernel.values()) v += 0.01 * rng.normal();
  const Shape s{1, 3, 8, 8};
  const Tensor x = uniform_tensor(s, rng);
  Tensor proj(s);
  for (double& v : proj.values()) v = rng.normal();
  return {"wiener", wiener::wiener_gradcheck(p, x, proj, kStep), p.kernel.size() + 1};
}

CheckResult check_ssim_loss(std::uint64_t seed) {
  Rng rng(seed + 1);
  const Shape s{1, 3, 8, 8};
  const Tensor target = uniform_tensor(s, rng);
  const auto cfg = small_window();
  return check_input_gradient("ssim_loss", uniform_tensor(s, rng),
                              [&](const Tensor& p, Tensor* g) { return losses::ssim_loss(p, target, cfg, g); });
}

CheckResult check_perceptual_loss(std::uint64_t seed) {
  Rng rng(seed + 2);
  const Shape s{1, 3, 8, 8};
  const Tensor target = uniform_tensor(s, rng);
  const auto fe = losses::FeatureExtractor::fixed_random("block3", seed + 3);
  return check_input_gradient("perceptual_loss", uniform_tensor(s, rng), [&](const Tensor& p, Tensor* g) {
    return losses::perceptual_loss(fe, p, target, g);
  });
}

CheckResult check_model(std::uint64_t seed, std::size_t samples) {
  Rng rng(seed + 4);
  network::ModelConfig mc;
  mc.unet.depth = 3;
  mc.unet.base_channels = 4;
  mc.with_wiener = true;
  network::ModelParams params = network::build_model(mc, seed);

  losses::LossConfig lc;
  lc.ssim = small_window();
  lc.extractor = std::make_shared<const losses::FeatureExtractor>(losses::FeatureExtractor::fixed_random("block3", seed));

  const Shape s{1, 3, 8, 8};
  const Tensor x = uniform_tensor(s, rng);
  const Tensor target = uniform_tensor(s, rng);

  auto loss = [&] {
    const Tensor y = network::model_forward(params, x);
    return losses::compound_loss(lc, y, target).total;
  };
  network::ModelTrace trace;
  const Tensor y = network::model_forward(params, x, &trace);
  Tensor dy;
  losses::compound_loss(lc, y, target, &dy);
  network::Gradients grads = network::zero_gradients(params);
  network::model_backward(params, trace, dy, grads);

  auto views = network::parameter_views(params);
  std::size_t total = 0;
  for (const auto& v : views) total += v.values.size();
  CheckResult r{"model", 0.0, 0};
  for (std::size_t k = 0; k < samples; ++k) {
    std::size_t flat = rng.below(total);
    std::size_t t = 0;
    while (flat >= views[t].values.size()) flat -= views[t++].values.size();
    const double numeric = central_difference(loss, views[t].values[flat], kStep);
    r.max_relative_error = std::max(r.max_relative_error, relative_error(grads[t][flat], numeric));
    ++r.checked;
  }
  return r;
}

std::vector<CheckResult> run_all(std::uint64_t seed) {
  return {check_wiener(seed), check_ssim_loss(seed), check_perceptual_loss(seed), check_model(seed)};
}

}  // namespace ulw::gradcheck
