#include <doctest.h>

#include <fstream>
#include <set>

#include "support.hpp"
#include "ulw/errors.hpp"
#include "ulw/image.hpp"

using namespace ulw;
using ulw::test::TempDir;
using ulw::test::fixture;

namespace {

double mean(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s / static_cast<double>(t.size());
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

image::PairedDataset tiny_dataset(std::size_t n, std::size_t size = 16) {
  image::SyntheticSpec spec;
  spec.pairs = n;
  spec.height = spec.width = size;
  spec.seed = 5;
  return image::make_synthetic_dataset(spec);
}

std::set<std::string> ids(const image::PairedDataset& ds) {
  std::set<std::string> out;
  for (const auto& s : ds.samples()) out.insert(s.id);
  return out;
}

}  // namespace

TEST_SUITE("image") {
  TEST_CASE("8-bit decode scales by 1/255") {
    const ImageBatch img = image::load_image(fixture("rgb8_128.png"));
    REQUIRE(img.shape() == Shape{1, 3, 4, 4});
    CHECK(img.at(0, 0, 1, 1) == 128.0 / 255.0);
    CHECK(img.at(0, 0, 1, 1) == doctest::Approx(0.50196).epsilon(1e-5));
    CHECK(img.at(0, 0, 0, 0) == 1.0);
    CHECK(img.at(0, 1, 0, 0) == 0.0);
    CHECK(img.at(0, 2, 0, 0) == 10.0 / 255.0);

    const ImageBatch zero = image::load_image(fixture("rgb8_zero.png"));
    for (double v : zero.values()) CHECK(v == 0.0);
  }

  TEST_CASE("decode errors name the offending property") {
    CHECK_THROWS_AS(image::load_image(fixture("does_not_exist.png")), IoError);
    CHECK_THROWS_WITH_AS(image::load_image(fixture("gray8.png")), doctest::Contains("channel count is 1"),
                         FormatError);
    CHECK_THROWS_WITH_AS(image::load_image(fixture("rgba8.png")), doctest::Contains("channel count is 4"),
                         FormatError);
    CHECK_THROWS_WITH_AS(image::load_image(fixture("rgb16.png")), doctest::Contains("bit depth is 16"),
                         FormatError);
  }

  TEST_CASE("PNG round trip is exact on 8-bit levels") {
    TempDir dir("png");
    Tensor img(Shape{1, 3, 5, 7});
    Rng rng(4);
    for (double& v : img.values()) v = static_cast<double>(rng.below(256)) / 255.0;
    image::save_image(img, dir / "a.png");
    CHECK(image::load_image(dir / "a.png") == img);
    // Identical inputs give identical bytes.
    CHECK(image::encode_png(img) == image::encode_png(img));
  }

  TEST_CASE("manifest ingestion") {
    TempDir dir("manifest");
    const auto ds = tiny_dataset(3);
    const auto manifest = image::write_paired_dataset(ds, dir.path());
    const auto loaded = image::load_paired_dataset(manifest);
    REQUIRE(loaded.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(loaded[i].id == ds[i].id);
      CHECK(test::max_abs_diff(loaded[i].clean, ds[i].clean) <= 0.5 / 255.0 + 1e-12);
    }

    SUBCASE("two rows, comments and blanks skipped, order kept") {
      write_file(dir / "two.tsv", "# header comment\nb\tsmoky/synth_0001.png\tclean/synth_0001.png\n\n"
                                  "a\tsmoky/synth_0000.png\tclean/synth_0000.png\n");
      const auto two = image::load_paired_dataset(dir / "two.tsv");
      REQUIRE(two.size() == 2);
      CHECK(two[0].id == "b");
      CHECK(two[1].id == "a");
    }
    SUBCASE("shape mismatch within a pair cites the id") {
      Tensor small(Shape{1, 3, 8, 8}, 0.5);
      image::save_image(small, dir / "small.png");
      write_file(dir / "bad.tsv", "pairX\tsmall.png\tclean/synth_0000.png\n");
      CHECK_THROWS_WITH_AS(image::load_paired_dataset(dir / "bad.tsv"), doctest::Contains("pairX"), PairingError);
    }
    SUBCASE("duplicate id") {
      write_file(dir / "dup.tsv", "a\tsmoky/synth_0000.png\tclean/synth_0000.png\n"
                                  "a\tsmoky/synth_0001.png\tclean/synth_0001.png\n");
      CHECK_THROWS_AS(image::load_paired_dataset(dir / "dup.tsv"), ManifestError);
    }
    SUBCASE("empty manifest") {
      write_file(dir / "empty.tsv", "# nothing\n\n");
      CHECK_THROWS_AS(image::load_paired_dataset(dir / "empty.tsv"), DatasetError);
    }
    SUBCASE("wrong field count") {
      write_file(dir / "short.tsv", "a\tsmoky/synth_0000.png\n");
      CHECK_THROWS_AS(image::load_paired_dataset(dir / "short.tsv"), ManifestError);
    }
    SUBCASE("missing manifest") { CHECK_THROWS_AS(image::load_paired_dataset(dir / "nope.tsv"), IoError); }
  }

  TEST_CASE("synthetic smoke composite") {
    const ImageBatch clean = image::synth_clean(16, 16, 11);
    check_image_batch(clean);

    image::SmokeParams p;
    p.t_min = p.t_max = 1.0;
    CHECK(image::synth_smoke(clean, p) == clean);

    p.t_min = p.t_max = 0.0;
    p.atmosphere = {0.2, 0.4, 0.6};
    const ImageBatch full = image::synth_smoke(clean, p);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < 256; ++i) CHECK(full.plane(0, c)[i] == p.atmosphere[c]);
    }

    // White haze brightens any image whose mean is below 1.
    p = {};
    p.atmosphere = {1.0, 1.0, 1.0};
    p.t_max = 0.9;
    const ImageBatch hazy = image::synth_smoke(clean, p);
    REQUIRE(mean(clean) < 1.0);
    CHECK(mean(hazy) > mean(clean));

    p = {};
    p.t_min = 0.7;
    p.t_max = 0.6;
    CHECK_THROWS_AS(image::synth_smoke(clean, p), ParameterError);
    p = {};
    p.atmosphere = {1.2, 0.5, 0.5};
    CHECK_THROWS_AS(p.validate(), ParameterError);
  }

  TEST_CASE("transmittance stays in [t_min, t_max] (property)") {
    Rng gen(123);
    for (int trial = 0; trial < 40; ++trial) {
      image::SmokeParams p;
      const double a = gen.uniform(), b = gen.uniform();
      p.t_min = std::min(a, b);
      p.t_max = std::max(a, b);
      p.noise_scale = 1 + static_cast<int>(gen.below(20));
      p.seed = gen.next();
      const std::size_t h = 16 + gen.below(20), w = 16 + gen.below(20);
      const Tensor t = image::transmittance_field(h, w, p);
      for (double v : t.values()) {
        REQUIRE(v >= p.t_min);
        REQUIRE(v <= p.t_max);
      }
      const ImageBatch clean = image::synth_clean(h, w, p.seed);
      check_image_batch(image::synth_smoke(clean, p));
    }
  }

  TEST_CASE("synthetic dataset is deterministic and well formed") {
    const auto a = tiny_dataset(4), b = tiny_dataset(4);
    REQUIRE(a.size() == 4);
    CHECK(a[0].id == "synth_0000");
    CHECK(a[3].id == "synth_0003");
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(a[i].clean == b[i].clean);
      CHECK(a[i].smoky == b[i].smoky);
      CHECK_FALSE(a[i].smoky == a[i].clean);
    }
    CHECK(image::dataset_fingerprint(a) == image::dataset_fingerprint(b));
    CHECK(image::dataset_fingerprint(a) != image::dataset_fingerprint(tiny_dataset(5)));
  }

  TEST_CASE("split sizes") {
    const auto s = image::split_sizes(10, {});
    CHECK(s == std::array<std::size_t, 3>{8, 1, 1});
    CHECK(image::split_sizes(32, {}) == std::array<std::size_t, 3>{26, 3, 3});
    CHECK_THROWS_AS(image::split_sizes(10, {0.5, 0.5, 0.5}), ParameterError);
    CHECK_THROWS_AS(image::split_sizes(10, {1.0, 0.0, 0.0}), ParameterError);
    CHECK_THROWS_AS(image::split_sizes(10, {-0.2, 0.6, 0.6}), ParameterError);
    CHECK_THROWS_AS(image::split_dataset(tiny_dataset(2), {}, 0), DatasetError);
  }

  TEST_CASE("split partitions the id set (property)") {
    Rng gen(77);
    for (int trial = 0; trial < 25; ++trial) {
      const std::size_t n = 3 + gen.below(30);
      double f[3] = {0.2 + gen.uniform(), 0.2 + gen.uniform(), 0.2 + gen.uniform()};
      const double total = f[0] + f[1] + f[2];
      image::SplitFractions fr{f[0] / total, f[1] / total, 0.0};
      fr.test = 1.0 - fr.train - fr.val;
      const auto sizes = image::split_sizes(n, fr);
      CHECK(sizes[0] + sizes[1] + sizes[2] == n);
      if (sizes[0] == 0 || sizes[1] == 0 || sizes[2] == 0) continue;

      std::vector<image::PairedSample> samples;
      for (std::size_t i = 0; i < n; ++i) {
        samples.push_back({"s" + std::to_string(i), Tensor(Shape{1, 3, 2, 2}), Tensor(Shape{1, 3, 2, 2})});
      }
      const image::PairedDataset ds(samples);
      const std::uint64_t seed = gen.next();
      const auto split = image::split_dataset(ds, fr, seed);
      CHECK(split.train.size() == sizes[0]);
      CHECK(split.val.size() == sizes[1]);
      CHECK(split.test.size() == sizes[2]);

      std::set<std::string> all;
      for (const auto* part : {&split.train, &split.val, &split.test}) {
        const auto part_ids = ids(*part);
        CHECK(part_ids.size() == part->size());
        for (const auto& id : part_ids) CHECK(all.insert(id).second);  // disjoint
        // Input order preserved within each part.
        for (std::size_t i = 1; i < part->size(); ++i) {
          CHECK(std::stoul((*part)[i - 1].id.substr(1)) < std::stoul((*part)[i].id.substr(1)));
        }
      }
      CHECK(all == ids(ds));

      const auto again = image::split_dataset(ds, fr, seed);
      CHECK(ids(again.train) == ids(split.train));
      CHECK(ids(again.test) == ids(split.test));
    }
  }

  TEST_CASE("dataset invariants") {
    CHECK_THROWS_AS(image::PairedDataset(std::vector<image::PairedSample>{}), DatasetError);
    std::vector<image::PairedSample> dup{{"x", Tensor(Shape{1, 3, 2, 2}), Tensor(Shape{1, 3, 2, 2})},
                                         {"x", Tensor(Shape{1, 3, 2, 2}), Tensor(Shape{1, 3, 2, 2})}};
    CHECK_THROWS_AS(image::PairedDataset(std::move(dup)), ManifestError);
    std::vector<image::PairedSample> mismatch{{"y", Tensor(Shape{1, 3, 4, 4}), Tensor(Shape{1, 3, 2, 2})}};
    CHECK_THROWS_AS(image::PairedDataset(std::move(mismatch)), PairingError);
  }
}
