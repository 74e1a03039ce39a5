#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ulw/image.hpp"
#include "ulw/losses.hpp"
#include "ulw/metrics.hpp"
#include "ulw/network.hpp"

// Experiment configuration: a JSON document with a fixed schema (see
// docs/config_schema.md). Unknown keys are rejected so a typo cannot silently
// fall back to a default.
namespace ulw::config {

enum class DatasetSource { synthetic, manifest };

struct DatasetConfig {
  DatasetSource source = DatasetSource::synthetic;
  std::string manifest;  // resolved against the config file's directory
  image::SyntheticSpec synthetic{};
  image::SplitFractions split{};
};

struct ExtractorConfig {
  losses::ExtractorMode mode = losses::ExtractorMode::fixed_random;
  std::string layer;  // empty: default tap for the mode
  std::uint64_t seed = 0;
  std::string weights;  // pretrained only; empty defers to ULW_VGG16_WEIGHTS
};

struct LossSettings {
  losses::LossWeights weights{};
  ExtractorConfig extractor{};
  metrics::SSIMConfig ssim{};
};

struct OptimizerConfig {
  double learning_rate = 1e-4;
  std::uint64_t steps = 500;
  std::size_t batch_size = 4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct ExperimentConfig {
  DatasetConfig dataset{};
  network::ModelConfig model{};
  LossSettings loss{};
  OptimizerConfig optimizer{};
  std::uint64_t seed = 0;
  std::string output_dir = "runs/ulw";

  /// Throws ConfigurationError on any out-of-range field.
  void validate() const;
};

/// Throws ConfigurationError on malformed JSON, unknown keys or bad types.
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Sorted-key compact JSON with every field present.
std::string canonical_json(const ExperimentConfig& cfg);

/// SHA-256 (hex) of canonical_json() with output_dir blanked: where a run
/// writes does not change what it computes.
std::string config_hash(const ExperimentConfig& cfg);

/// Loss configuration with the extractor constructed; no extractor is built
/// when the perceptual weight is zero.
losses::LossConfig make_loss_config(const LossSettings& settings);

std::string_view dataset_source_name(DatasetSource s);

}  // namespace ulw::config
