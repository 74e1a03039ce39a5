#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "support.hpp"
#include "ulw/errors.hpp"
#include "ulw/kernels.hpp"
#include "ulw/metrics.hpp"

using namespace ulw;
using ulw::test::random_tensor;

namespace {

struct CiedePair {
  metrics::LabColor a, b;
  double expected;
};

std::vector<CiedePair> load_ciede_fixture() {
  std::ifstream in(test::fixture("ciede2000_reference_pairs.tsv"));
  REQUIRE(in.good());
  std::vector<CiedePair> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    CiedePair p;
    ss >> p.a.L >> p.a.a >> p.a.b >> p.b.L >> p.b.a >> p.b.b >> p.expected;
    REQUIRE_FALSE(ss.fail());
    out.push_back(p);
  }
  return out;
}

double loop_mse(const Tensor& x, const Tensor& y) {
  const Shape& s = x.shape();
  double sum = 0.0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < s.h; ++i)
        for (std::size_t j = 0; j < s.w; ++j) {
          const double d = x.at(n, c, i, j) - y.at(n, c, i, j);
          sum += d * d;
        }
  return sum / static_cast<double>(s.size());
}

// Direct 2-D windowed statistics at every valid position, no separability.
double brute_ssim(const Tensor& x, const Tensor& y, const metrics::SSIMConfig& cfg) {
  const int k = cfg.window_size;
  std::vector<double> g(static_cast<std::size_t>(k));
  double gs = 0.0;
  for (int i = 0; i < k; ++i) {
    const double d = i - (k - 1) / 2.0;
    g[i] = std::exp(-d * d / (2.0 * cfg.window_sigma * cfg.window_sigma));
    gs += g[i];
  }
  const double c1 = std::pow(cfg.k1 * cfg.dynamic_range, 2), c2 = std::pow(cfg.k2 * cfg.dynamic_range, 2);
  const Shape& s = x.shape();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t oy = 0; oy + k <= s.h; ++oy)
        for (std::size_t ox = 0; ox + k <= s.w; ++ox) {
          double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) {
              const double w = g[i] * g[j] / (gs * gs);
              const double a = x.at(n, c, oy + i, ox + j), b = y.at(n, c, oy + i, ox + j);
              mx += w * a;
              my += w * b;
              sxx += w * a * a;
              syy += w * b * b;
              sxy += w * a * b;
            }
          const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
          total += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
          ++count;
        }
  return total / static_cast<double>(count);
}

Tensor constant(Shape s, double v) { return Tensor(s, v); }

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("CIEDE2000 reference pairs") {
    const auto pairs = load_ciede_fixture();
    REQUIRE(pairs.size() == 34);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      CAPTURE(i + 1);
      const double d = metrics::ciede2000(pairs[i].a, pairs[i].b);
      CHECK(std::abs(d - pairs[i].expected) <= 1e-4);
      CHECK(std::abs(metrics::ciede2000(pairs[i].b, pairs[i].a) - d) <= 1e-12);
    }
    CHECK(metrics::ciede2000({50, 2.6772, -79.7751}, {50, 0, -82.7485}) == doctest::Approx(2.0425).epsilon(5e-5));
    CHECK(metrics::ciede2000({37, 12, -5}, {37, 12, -5}) == 0.0);
  }

  TEST_CASE("MSE against the loop oracle") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Tensor x = random_tensor({2, 3, 8, 8}, seed), y = random_tensor({2, 3, 8, 8}, seed + 100);
      CHECK(std::abs(metrics::mse(x, y) - loop_mse(x, y)) <= 1e-12);
    }
    const Tensor x = random_tensor({1, 3, 8, 8}, 1);
    CHECK(metrics::mse(x, x) == 0.0);
    CHECK(metrics::mse(constant({1, 3, 4, 4}, 0.0), constant({1, 3, 4, 4}, 0.1)) == doctest::Approx(0.01).epsilon(1e-14));
    CHECK_THROWS_AS(metrics::mse(x, random_tensor({1, 3, 8, 4}, 2)), DimensionError);
  }

  TEST_CASE("PSNR closed forms") {
    CHECK(metrics::psnr_from_mse(0.01) == doctest::Approx(20.0).epsilon(1e-14));
    CHECK(metrics::psnr_from_mse(0.0001) == doctest::Approx(40.0).epsilon(1e-14));
    CHECK(std::isinf(metrics::psnr_from_mse(0.0)));
    const Tensor x = random_tensor({1, 3, 8, 8}, 3), y = random_tensor({1, 3, 8, 8}, 4);
    CHECK(metrics::psnr(x, y) == 10.0 * std::log10(1.0 / metrics::mse(x, y)));
    CHECK(std::isinf(metrics::psnr(x, x)));
    CHECK_THROWS_AS(metrics::psnr(x, random_tensor({1, 3, 4, 8}, 2)), DimensionError);
  }

  TEST_CASE("SSIM configuration invariants") {
    metrics::SSIMConfig cfg;
    const auto taps = cfg.window_1d();
    CHECK(taps.size() == 11);
    double s = 0.0;
    for (double t : taps) {
      CHECK(t >= 0.0);
      s += t;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(cfg.c1() == doctest::Approx(1e-4).epsilon(1e-14));
    CHECK(cfg.c2() == doctest::Approx(9e-4).epsilon(1e-14));
    cfg.window_size = 4;
    CHECK_THROWS_AS(cfg.validate(), ParameterError);
    cfg.window_size = 1;
    CHECK_THROWS_AS(cfg.validate(), ParameterError);
  }

  TEST_CASE("SSIM examples") {
    const Tensor x = random_tensor({1, 3, 16, 16}, 7), y = random_tensor({1, 3, 16, 16}, 8);
    CHECK(std::abs(metrics::ssim(x, x) - 1.0) <= 1e-9);
    CHECK(std::abs(metrics::ssim(x, y) - metrics::ssim(y, x)) <= 1e-12);

    // Zero variances: only the luminance term survives.
    const double expected = (2 * 0.5 * 0.25 + 1e-4) / (0.25 + 0.0625 + 1e-4);
    const double got = metrics::ssim(constant({1, 3, 16, 16}, 0.5), constant({1, 3, 16, 16}, 0.25));
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
    CHECK(got == doctest::Approx(0.8001).epsilon(1e-4));

    CHECK_THROWS_AS(metrics::ssim(random_tensor({1, 3, 8, 8}, 1), random_tensor({1, 3, 8, 8}, 2)), DimensionError);
  }

  TEST_CASE("SSIM matches a direct windowed oracle") {
    metrics::SSIMConfig cfg;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const Tensor x = random_tensor({2, 3, 17, 14}, seed), y = random_tensor({2, 3, 17, 14}, 50 + seed);
      CHECK(std::abs(metrics::ssim(x, y, cfg) - brute_ssim(x, y, cfg)) <= 1e-12);
    }
    cfg.window_size = 7;
    cfg.window_sigma = 1.1;
    const Tensor x = random_tensor({1, 3, 9, 12}, 9), y = random_tensor({1, 3, 9, 12}, 10);
    CHECK(std::abs(metrics::ssim(x, y, cfg) - brute_ssim(x, y, cfg)) <= 1e-12);
  }

  TEST_CASE("metric ranges (property)") {
    Rng gen(31);
    for (int trial = 0; trial < 30; ++trial) {
      const Shape s{1 + gen.below(2), 3, 11 + gen.below(10), 11 + gen.below(10)};
      const Tensor x = random_tensor(s, gen.next());
      Tensor y = random_tensor(s, gen.next());
      // Mix y toward x by a random amount to cover the whole similarity range.
      const double mix = gen.uniform();
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = mix * x[i] + (1 - mix) * y[i];
      const double ss = metrics::ssim(x, y);
      CHECK(ss >= -1.0);
      CHECK(ss <= 1.0);
      CHECK(metrics::mse(x, y) >= 0.0);
      CHECK(metrics::ciede2000_image(x, y) >= 0.0);
    }
  }

  TEST_CASE("sRGB to Lab") {
    const auto white = metrics::srgb_to_lab(1, 1, 1);
    CHECK(white.L == doctest::Approx(100.0).epsilon(1e-5));
    CHECK(std::abs(white.a) <= 1e-3);
    CHECK(std::abs(white.b) <= 1e-3);
    CHECK(metrics::srgb_to_lab(0, 0, 0) == metrics::LabColor{0, 0, 0});

    const auto gray = metrics::srgb_to_lab(0.5, 0.5, 0.5);
    CHECK(std::abs(gray.a) <= 1e-6);
    CHECK(std::abs(gray.b) <= 1e-6);
    // Reference value from an independent colour library (scikit-image rgb2lab).
    CHECK(std::abs(gray.L - 53.38896) <= 1e-3);

    Rng gen(5);
    for (int i = 0; i < 200; ++i) {
      const auto lab = metrics::srgb_to_lab(gen.uniform(), gen.uniform(), gen.uniform());
      CHECK(lab.L >= 0.0);
      CHECK(lab.L <= 100.0 + 1e-9);
    }
  }

  TEST_CASE("CIEDE2000 image mean") {
    Tensor x(Shape{1, 3, 1, 2}), y(Shape{1, 3, 1, 2});
    const double px[2][3] = {{0.2, 0.5, 0.7}, {0.9, 0.1, 0.3}};
    const double py[2][3] = {{0.25, 0.45, 0.6}, {0.8, 0.2, 0.35}};
    for (std::size_t p = 0; p < 2; ++p) {
      for (std::size_t c = 0; c < 3; ++c) {
        x.at(0, c, 0, p) = px[p][c];
        y.at(0, c, 0, p) = py[p][c];
      }
    }
    const double d1 = metrics::ciede2000(metrics::srgb_to_lab(px[0][0], px[0][1], px[0][2]),
                                         metrics::srgb_to_lab(py[0][0], py[0][1], py[0][2]));
    const double d2 = metrics::ciede2000(metrics::srgb_to_lab(px[1][0], px[1][1], px[1][2]),
                                         metrics::srgb_to_lab(py[1][0], py[1][1], py[1][2]));
    CHECK(metrics::ciede2000_image(x, y) == doctest::Approx((d1 + d2) / 2).epsilon(1e-14));
    CHECK(metrics::ciede2000_image(x, x) == 0.0);

    Tensor u(Shape{1, 3, 5, 5}), v(Shape{1, 3, 5, 5});
    for (std::size_t i = 0; i < 25; ++i) {
      u.plane(0, 0)[i] = 0.3, u.plane(0, 1)[i] = 0.6, u.plane(0, 2)[i] = 0.1;
      v.plane(0, 0)[i] = 0.35, v.plane(0, 1)[i] = 0.5, v.plane(0, 2)[i] = 0.2;
    }
    const double single = metrics::ciede2000(metrics::srgb_to_lab(0.3, 0.6, 0.1), metrics::srgb_to_lab(0.35, 0.5, 0.2));
    CHECK(metrics::ciede2000_image(u, v) == doctest::Approx(single).epsilon(1e-13));
    CHECK_THROWS_AS(metrics::ciede2000_image(u, x), DimensionError);
  }

  TEST_CASE("evaluate_pair composes the four metrics") {
    const Tensor x = random_tensor({1, 3, 16, 16}, 21), y = random_tensor({1, 3, 16, 16}, 22);
    const auto same = metrics::evaluate_pair(x, x, "same");
    CHECK(same.ssim == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::isinf(same.psnr_db));
    CHECK(same.mse == 0.0);
    CHECK(same.ciede2000 == 0.0);

    const auto r = metrics::evaluate_pair(x, y, "p");
    CHECK(r.id == "p");
    CHECK(r.ssim == metrics::ssim(x, y));
    CHECK(r.psnr_db == metrics::psnr(x, y));
    CHECK(r.mse == metrics::mse(x, y));
    CHECK(r.ciede2000 == metrics::ciede2000_image(x, y));

    // Determinism snapshot: repeated evaluation, and agreement across ISAs.
    const auto again = metrics::evaluate_pair(x, y, "p");
    CHECK(again.ssim == r.ssim);
    CHECK(again.ciede2000 == r.ciede2000);
    const kernels::Isa before = kernels::active().isa;
    kernels::set_active(kernels::Isa::scalar);
    const auto scalar = metrics::evaluate_pair(x, y, "p");
    kernels::set_active(before);
    CHECK(scalar.mse == doctest::Approx(r.mse).epsilon(1e-13));
    CHECK(scalar.ssim == doctest::Approx(r.ssim).epsilon(1e-13));
  }

  TEST_CASE("aggregate") {
    CHECK_THROWS_AS(metrics::aggregate({}), AggregationError);
    const metrics::MetricRecord a{"a", 0.9, 30.0, 0.0, 1.0};
    const auto one = metrics::aggregate(std::vector{a});
    CHECK(one.mean.ssim == a.ssim);
    CHECK(one.mean.psnr_db == a.psnr_db);
    CHECK(one.mean.mse == a.mse);
    CHECK(one.mean.ciede2000 == a.ciede2000);
    CHECK(one.count == 1);

    const metrics::MetricRecord b{"b", 0.7, 20.0, 0.002, 3.0};
    const auto two = metrics::aggregate(std::vector{a, b});
    CHECK(two.mean.mse == doctest::Approx(0.001).epsilon(1e-14));
    CHECK(two.mean.psnr_db == 25.0);

    const metrics::MetricRecord c{"c", 1.0, std::numeric_limits<double>::infinity(), 0.0, 0.0};
    const auto mixed = metrics::aggregate(std::vector{a, b, c});
    CHECK(mixed.psnr_infinite == 1);
    CHECK(mixed.mean.psnr_db == 25.0);
    CHECK(mixed.mean.ssim == doctest::Approx((0.9 + 0.7 + 1.0) / 3).epsilon(1e-14));
  }

  TEST_CASE("metrics CSV") {
    std::ostringstream out;
    const std::vector<metrics::MetricRecord> rows{{"x", 1.0, std::numeric_limits<double>::infinity(), 0.0, 0.0},
                                                  {"y", 0.5, 20.0, 0.01, 2.25}};
    metrics::write_metrics_csv(out, rows);
    CHECK(out.str() == "id,ssim,psnr_db,mse,ciede2000\nx,1,inf,0,0\ny,0.5,20,0.01,2.25\n");
    CHECK(metrics::format_value(0.1) == "0.1");
    CHECK(std::stod(metrics::format_value(1.0 / 3.0)) == 1.0 / 3.0);
  }
}
