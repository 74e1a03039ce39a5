#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ulw::gradcheck {

/// |analytic - numeric| / max(1e-8, |numeric|)
double relative_error(double analytic, double numeric);

/// (f(v + h) - f(v - h)) / 2h, perturbing `value` in place and restoring it.
double central_difference(const std::function<double()>& f, double& value, double step);

struct CheckResult {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

/// Finite-difference checks on seeded 1x3x8x8 inputs; each returns the worst
/// relative error over the checked coordinates.
CheckResult check_wiener(std::uint64_t seed);
CheckResult check_ssim_loss(std::uint64_t seed);
CheckResult check_perceptual_loss(std::uint64_t seed);
/// Full model (U-Net + Wiener + clamp) under the compound loss, over a
/// sampled subset of `samples` parameters.
CheckResult check_model(std::uint64_t seed, std::size_t samples = 50);

std::vector<CheckResult> run_all(std::uint64_t seed);

constexpr double kTolerance = 1e-3;

}  // namespace ulw::gradcheck
