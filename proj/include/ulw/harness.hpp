#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ulw/checkpoint.hpp"
#include "ulw/config.hpp"
#include "ulw/image.hpp"
#include "ulw/losses.hpp"
#include "ulw/metrics.hpp"

// Training, evaluation and the four-variant ablation study.
namespace ulw::harness {

/// Per-step record; components are unweighted and empty when their weight is
/// zero (the term was never evaluated).
struct HistoryRow {
  std::uint64_t step = 0;
  double total = 0.0;
  losses::LossComponents components;
};

/// CSV with header `step,total,mse,ssim,perc`; absent components are empty
/// cells.
void write_history_csv(std::ostream& out, const std::vector<HistoryRow>& history, bool header = true);

/// Indices of the training samples in batch `step`. Each epoch draws a fresh
/// seeded permutation, so any step's batch is computable without replaying
/// earlier ones; this is what makes resumption exact.
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t dataset_size, std::size_t batch_size,
                                       std::uint64_t step);

/// Adam with bias correction. The state is aligned with
/// network::parameter_views().
void adam_step(network::ModelParams& params, const network::Gradients& grads, network::OptimizerState& state,
               const config::OptimizerConfig& opt);

struct TrainResult {
  network::Checkpoint checkpoint;
  std::vector<HistoryRow> history;  // steps run by this call only
};

struct TrainOptions {
  /// Continue from this checkpoint; its config hash must match.
  std::optional<network::Checkpoint> resume;
  /// Called after each step; returning false stops early (the checkpoint then
  /// reflects the last completed step).
  std::function<bool(const HistoryRow&)> on_step;
  /// With checkpoint_every > 0, called after every that-many completed steps.
  std::uint64_t checkpoint_every = 0;
  std::function<void(const network::Checkpoint&)> on_checkpoint;
};

/// Trains on every sample of `train_data`. Deterministic given the config.
/// Throws TrainingError naming the step when the loss becomes non-finite.
TrainResult train(const config::ExperimentConfig& cfg, const image::PairedDataset& train_data,
                  TrainOptions options = {});

struct Evaluation {
  metrics::Aggregate summary;
  std::vector<metrics::MetricRecord> records;
};

/// Metrics of model_forward(smoky) against clean for every pair. Does not
/// modify the parameters.
Evaluation evaluate(const network::ModelParams& params, const image::PairedDataset& data);

/// The "do nothing" reference: metrics of the smoky input itself.
Evaluation evaluate_identity(const image::PairedDataset& data);

/// The dataset described by the config (synthetic or manifest).
image::PairedDataset load_dataset(const config::ExperimentConfig& cfg);

enum class Variant { no_wiener, no_ssim_loss, no_perceptual_loss, full_ulw };

/// Report row order.
inline constexpr std::array<Variant, 4> kVariants{Variant::no_wiener, Variant::no_ssim_loss,
                                                  Variant::no_perceptual_loss, Variant::full_ulw};

std::string_view variant_name(Variant v);       // "no_wiener", ...
std::string_view variant_label(Variant v);      // "w/o Learnable Wiener filter", ...
Variant parse_variant(std::string_view name);   // ParameterError

/// The base config with exactly one field changed (none for full_ulw).
config::ExperimentConfig variant_config(const config::ExperimentConfig& base, Variant v);

struct AblationRow {
  Variant variant;
  metrics::MetricRecord mean;
};

struct VariantRun {
  Variant variant;
  TrainResult training;
  Evaluation evaluation;
};

struct AblationReport {
  std::vector<AblationRow> rows;  // kVariants order
  std::string config_hash;        // of the base config
  std::string dataset_fingerprint;
  metrics::MetricRecord baseline;  // smoky input vs clean on the test split
};

struct AblationResult {
  AblationReport report;
  std::vector<VariantRun> runs;  // kVariants order
  image::DatasetSplit split;
};

/// Splits `data` once with the base seed, trains each variant on the train
/// split and evaluates it on the test split. A failing variant aborts with a
/// TrainingError naming it.
AblationResult run_ablation(const config::ExperimentConfig& base, const image::PairedDataset& data,
                            const std::function<void(Variant, const HistoryRow&)>& on_step = {});

/// Derived seeds for independent streams of one experiment.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

}  // namespace ulw::harness
