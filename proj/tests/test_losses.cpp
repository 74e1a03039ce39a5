#include <doctest.h>

#include <cstring>
#include <fstream>

#include "support.hpp"
#include "ulw/errors.hpp"
#include "ulw/gradcheck.hpp"
#include "ulw/kernels.hpp"
#include "ulw/losses.hpp"

using namespace ulw;
using ulw::test::random_tensor;

namespace {

// Direct zero-padded correlation, stride 2, pad 1, followed by ReLU.
Tensor naive_block(const Tensor& x, const Tensor& w, const Tensor& b) {
  const Shape& s = x.shape();
  const std::size_t cout = w.shape().n, oh = (s.h + 2 - 3) / 2 + 1, ow = (s.w + 2 - 3) / 2 + 1;
  Tensor y(Shape{s.n, cout, oh, ow});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = b[co];
          for (std::size_t ci = 0; ci < s.c; ++ci)
            for (std::size_t ky = 0; ky < 3; ++ky)
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * 2 + ky) - 1;
                const auto ix = static_cast<std::ptrdiff_t>(ox * 2 + kx) - 1;
                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(s.h) ||
                    ix >= static_cast<std::ptrdiff_t>(s.w))
                  continue;
                acc += w.at(co, ci, ky, kx) * x.at(n, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
              }
          y.at(n, co, oy, ox) = std::max(acc, 0.0);
        }
  return y;
}

double perceptual_oracle(const losses::FeatureExtractor& fe, const Tensor& a, const Tensor& b) {
  const auto& p = fe.parameters();
  Tensor fa = a, fb = b;
  for (std::size_t i = 0; i + 1 < p.size(); i += 2) {
    fa = naive_block(fa, p[i], p[i + 1]);
    fb = naive_block(fb, p[i], p[i + 1]);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) sum += (fa[i] - fb[i]) * (fa[i] - fb[i]);
  return sum / static_cast<double>(fa.size());
}

// A ULWVGG16 v1 file with small random weights; only the layout matters here.
void write_random_vgg(const std::filesystem::path& path) {
  static constexpr std::size_t layers[7][2] = {{3, 64},    {64, 64},   {64, 128}, {128, 128},
                                               {128, 256}, {256, 256}, {256, 256}};
  std::ofstream out(path, std::ios::binary);
  out.write("ULWVGG16", 8);
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 4);
  Rng rng(17);
  for (const auto& l : layers) {
    const std::size_t count = l[0] * l[1] * 9 + l[1];
    std::vector<float> v(count);
    for (float& f : v) f = static_cast<float>(rng.uniform(-0.05, 0.05));
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(count * sizeof(float)));
  }
}

losses::LossConfig full_config() {
  losses::LossConfig cfg;
  cfg.extractor = std::make_shared<const losses::FeatureExtractor>(losses::FeatureExtractor::fixed_random("block3", 1));
  return cfg;
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("SSIM loss") {
    const Tensor x = random_tensor({1, 3, 16, 16}, 1);
    CHECK(std::abs(losses::ssim_loss(x, x, {})) <= 1e-12);
    const Tensor a(Shape{1, 3, 16, 16}, 0.5), b(Shape{1, 3, 16, 16}, 0.25);
    const double expected = 1.0 - (2 * 0.5 * 0.25 + 1e-4) / (0.25 + 0.0625 + 1e-4);
    CHECK(losses::ssim_loss(a, b, {}) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(losses::ssim_loss(a, b, {}) == doctest::Approx(0.1999).epsilon(1e-3));
    for (std::uint64_t seed = 0; seed < 3; ++seed) CHECK(gradcheck::check_ssim_loss(seed).max_relative_error < 1e-3);
  }

  TEST_CASE("perceptual loss against a direct forward oracle") {
    const auto fe = losses::FeatureExtractor::fixed_random("block3", 42);
    const Tensor a = random_tensor({1, 3, 16, 16}, 2), b = random_tensor({1, 3, 16, 16}, 3);
    const double got = losses::perceptual_loss(fe, a, b);
    CHECK(std::abs(got - perceptual_oracle(fe, a, b)) <= 1e-9);
    CHECK(got > 0.0);
    CHECK(losses::perceptual_loss(fe, a, a) == 0.0);

    for (const char* tag : {"block1", "block2"}) {
      const auto shallow = losses::FeatureExtractor::fixed_random(tag, 42);
      CHECK(std::abs(losses::perceptual_loss(shallow, a, b) - perceptual_oracle(shallow, a, b)) <= 1e-9);
    }
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      CHECK(gradcheck::check_perceptual_loss(seed).max_relative_error < 1e-3);
    }
  }

  TEST_CASE("perceptual loss is non-negative (property)") {
    const auto fe = losses::FeatureExtractor::fixed_random("block3", 3);
    Rng gen(4);
    for (int i = 0; i < 20; ++i) {
      const Shape s{1 + gen.below(2), 3, 8 + 8 * gen.below(3), 8 + 8 * gen.below(3)};
      CHECK(losses::perceptual_loss(fe, random_tensor(s, gen.next()), random_tensor(s, gen.next())) >= 0.0);
    }
  }

  TEST_CASE("extractor contract") {
    const auto fe = losses::FeatureExtractor::fixed_random("block3", 9);
    CHECK(fe.tap_channels() == 64);
    CHECK(fe.min_extent() == 8);
    const Tensor x = random_tensor({2, 3, 16, 16}, 5);
    const Tensor f1 = fe.features(x);
    CHECK(f1.shape() == Shape{2, 64, 2, 2});
    CHECK(f1 == fe.features(x));
    CHECK(f1 == losses::FeatureExtractor::fixed_random("block3", 9).features(x));
    CHECK_FALSE(f1 == losses::FeatureExtractor::fixed_random("block3", 10).features(x));

    CHECK_THROWS_AS(losses::perceptual_loss(fe, random_tensor({1, 3, 4, 4}, 1), random_tensor({1, 3, 4, 4}, 2)),
                    DimensionError);
    CHECK_THROWS_AS(losses::FeatureExtractor::fixed_random("block4", 1), ConfigurationError);

    // Frozen: a forward/backward pass leaves the weights bit-identical.
    const std::vector<Tensor> before = fe.parameters();
    Tensor g;
    losses::perceptual_loss(fe, x, random_tensor({2, 3, 16, 16}, 6), &g);
    CHECK(fe.parameters() == before);
  }

  TEST_CASE("pretrained extractor") {
    test::TempDir dir("vgg");
    CHECK_THROWS_AS(losses::make_extractor(losses::ExtractorMode::pretrained, "relu3_3", 0, dir / "missing.bin"),
                    EnvironmentError);
    {
      std::ofstream(dir / "junk.bin") << "not a weight file";
      CHECK_THROWS_AS(losses::FeatureExtractor::pretrained_vgg16("relu3_3", dir / "junk.bin"), FormatError);
    }
    write_random_vgg(dir / "vgg.bin");
    const auto fe = losses::make_extractor(losses::ExtractorMode::pretrained, "relu3_3", 0, dir / "vgg.bin");
    CHECK(fe.tap_channels() == 256);
    CHECK(fe.min_extent() == 4);
    const Tensor f = fe.features(random_tensor({1, 3, 224, 224}, 1));
    CHECK(f.shape() == Shape{1, 256, 56, 56});
    const auto early = losses::FeatureExtractor::pretrained_vgg16("relu2_1", dir / "vgg.bin");
    CHECK(early.features(random_tensor({1, 3, 16, 16}, 2)).shape() == Shape{1, 128, 8, 8});
  }

  TEST_CASE("compound loss") {
    const Tensor a = random_tensor({2, 3, 16, 16}, 11), b = random_tensor({2, 3, 16, 16}, 12);
    auto cfg = full_config();

    SUBCASE("reduces to MSE") {
      cfg.weights = {1.0, 0.0, 0.0};
      const auto v = losses::compound_loss(cfg, a, b);
      CHECK(v.total == metrics::mse(a, b));
      CHECK(v.components.mse.has_value());
      CHECK_FALSE(v.components.ssim.has_value());
      CHECK_FALSE(v.components.perceptual.has_value());
    }
    SUBCASE("identical inputs give zero") {
      for (auto w : {losses::LossWeights{}, losses::LossWeights{0.3, 2.0, 5.0}}) {
        cfg.weights = w;
        CHECK(std::abs(losses::compound_loss(cfg, a, a).total) <= 1e-12);
      }
    }
    SUBCASE("linear in the weights") {
      cfg.weights = {0.7, 1.3, 0.05};
      const double t1 = losses::compound_loss(cfg, a, b).total;
      cfg.weights = {1.4, 2.6, 0.1};
      CHECK(losses::compound_loss(cfg, a, b).total == doctest::Approx(2.0 * t1).epsilon(1e-14));
    }
    SUBCASE("a zero weight is bitwise the same as omitting the term") {
      // Reference: the remaining terms summed by hand in the same order.
      cfg.weights = {1.0, 0.0, 0.01};
      cfg.ssim.window_size = 4;  // invalid: evaluating the SSIM term would throw
      Tensor g;
      const auto v = losses::compound_loss(cfg, a, b, &g);
      Tensor gm, gp;
      const double m = losses::mse_loss(a, b, &gm);
      const double p = losses::perceptual_loss(*cfg.extractor, a, b, &gp);
      CHECK(v.total == 1.0 * m + 0.01 * p);
      Tensor expect(a.shape());
      kernels::active().axpy(1.0, gm.data(), expect.data(), gm.size());
      kernels::active().axpy(0.01, gp.data(), expect.data(), gp.size());
      CHECK(g == expect);
      CHECK_FALSE(v.components.ssim.has_value());

      cfg.weights = {1.0, 1.0, 0.0};
      cfg.ssim.window_size = 11;
      cfg.extractor.reset();  // never consulted
      const auto w = losses::compound_loss(cfg, a, b);
      CHECK(w.total == 1.0 * metrics::mse(a, b) + 1.0 * losses::ssim_loss(a, b, cfg.ssim));
      CHECK_FALSE(w.components.perceptual.has_value());
    }
    SUBCASE("training-time validation") {
      cfg.weights = {0.0, 0.0, 0.0};
      CHECK_THROWS_AS(cfg.validate_for_training(), ConfigurationError);
      cfg.weights = {1.0, -1.0, 0.0};
      CHECK_THROWS_AS(cfg.validate_for_training(), ConfigurationError);
      cfg.weights = {1.0, 1.0, 0.01};
      cfg.extractor.reset();
      CHECK_THROWS_AS(cfg.validate_for_training(), ConfigurationError);
    }
  }

  TEST_CASE("extractor mode names") {
    CHECK(losses::parse_extractor_mode("fixed-random") == losses::ExtractorMode::fixed_random);
    CHECK(losses::parse_extractor_mode("pretrained") == losses::ExtractorMode::pretrained);
    CHECK(losses::extractor_mode_name(losses::ExtractorMode::fixed_random) == "fixed-random");
    CHECK(losses::default_layer_tag(losses::ExtractorMode::pretrained) == "relu3_3");
  }
}
