#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ulw/rng.hpp"
#include "ulw/tensor.hpp"

// Image I/O, paired-dataset ingestion, synthetic smoke and dataset splits.
namespace ulw::image {

/// Decode an 8-bit RGB PNG into a (1, 3, H, W) batch, v -> v / 255.
ImageBatch load_image(const std::filesystem::path& path);

/// Encode sample 0 of `img` as an 8-bit RGB PNG (round(v * 255), clamped).
void save_image(const ImageBatch& img, const std::filesystem::path& path);

/// PNG bytes of sample 0 (what save_image writes).
std::vector<std::uint8_t> encode_png(const ImageBatch& img);

struct PairedSample {
  std::string id;
  ImageBatch smoky;
  ImageBatch clean;
};

/// Immutable, nonempty, id-unique list of smoky/clean pairs.
class PairedDataset {
 public:
  /// Throws DatasetError on an empty list, ManifestError on duplicate ids and
  /// PairingError when a pair's shapes differ.
  PairedDataset(std::vector<PairedSample> samples, std::string manifest_path = {});

  const std::vector<PairedSample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  const PairedSample& operator[](std::size_t i) const { return samples_[i]; }
  const std::string& manifest_path() const { return manifest_path_; }

 private:
  std::vector<PairedSample> samples_;
  std::string manifest_path_;
};

/// Read `id<TAB>smoky<TAB>clean` records. Relative paths resolve against the
/// manifest's directory; blank and '#' lines are skipped.
PairedDataset load_paired_dataset(const std::filesystem::path& manifest);

/// Write PNGs under `dir` plus `dir/manifest.tsv`; returns the manifest path.
std::filesystem::path write_paired_dataset(const PairedDataset& ds, const std::filesystem::path& dir);

/// SHA-256 (hex) over ids and pixel values, in dataset order.
std::string dataset_fingerprint(const PairedDataset& ds);

struct SmokeParams {
  std::array<double, 3> atmosphere{0.85, 0.85, 0.85};
  double t_min = 0.3;
  double t_max = 0.8;
  int noise_scale = 16;  // lattice spacing of the haze field, pixels
  std::uint64_t seed = 0;

  /// Throws ParameterError.
  void validate() const;
};

/// Smooth random field in [0, 1): value noise on a lattice of spacing
/// `scale`, smoothstep-interpolated.
Tensor value_noise(std::size_t height, std::size_t width, int scale, Rng& rng);

/// Per-pixel transmittance t in [t_min, t_max], shape (1, 1, H, W).
Tensor transmittance_field(std::size_t height, std::size_t width, const SmokeParams& params);

/// Hazing composite t * I + (1 - t) * A. Every sample in the batch gets its
/// own field drawn from the same seeded stream.
ImageBatch synth_smoke(const ImageBatch& clean, const SmokeParams& params);

/// Procedural tissue-like scene: shaded reddish base, fine texture, dark
/// vessel curves and specular highlights. Deterministic per seed.
ImageBatch synth_clean(std::size_t height, std::size_t width, std::uint64_t seed);

struct SyntheticSpec {
  std::size_t pairs = 32;
  std::size_t height = 64;
  std::size_t width = 64;
  SmokeParams smoke{};
  std::uint64_t seed = 0;
};

/// Pairs (synth_smoke(clean), clean) with ids "synth_0000", ...
PairedDataset make_synthetic_dataset(const SyntheticSpec& spec);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  PairedDataset train;
  PairedDataset val;
  PairedDataset test;
};

/// Seeded partition. Sizes use largest remainders so they sum to the input
/// size; each part keeps the input order. Throws ParameterError on invalid
/// fractions and DatasetError if a part would be empty.
DatasetSplit split_dataset(const PairedDataset& ds, SplitFractions fractions, std::uint64_t seed);

/// Sizes split_dataset would produce for `count` samples.
std::array<std::size_t, 3> split_sizes(std::size_t count, SplitFractions fractions);

}  // namespace ulw::image
