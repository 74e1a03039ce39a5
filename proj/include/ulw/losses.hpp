#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ulw/metrics.hpp"
#include "ulw/ops.hpp"
#include "ulw/tensor.hpp"

namespace ulw::losses {

enum class ExtractorMode { pretrained, fixed_random };

ExtractorMode parse_extractor_mode(std::string_view name);
std::string_view extractor_mode_name(ExtractorMode m);

/// Frozen convolutional feature map phi_l used by the perceptual loss.
///
/// `fixed_random`: three seeded 3x3 stride-2 conv + ReLU blocks
/// (3 -> 16 -> 32 -> 64 channels), taps "block1".."block3".
/// `pretrained`: the VGG-16 feature stack up to relu3_3 with ImageNet input
/// normalisation, taps "relu1_1".."relu3_3"; weights come from a ULWVGG16
/// file (see docs/vgg16_weights.md).
///
/// Immutable after construction: every member is const and copies share the
/// weight storage.
class FeatureExtractor {
 public:
  static FeatureExtractor fixed_random(const std::string& layer_tag, std::uint64_t seed);
  static FeatureExtractor pretrained_vgg16(const std::string& layer_tag, const std::filesystem::path& weights);

  ExtractorMode mode() const { return mode_; }
  const std::string& layer_tag() const { return tag_; }
  std::size_t tap_channels() const { return tap_channels_; }
  /// Smallest spatial extent accepted at the configured tap.
  std::size_t min_extent() const { return min_extent_; }
  const std::vector<Tensor>& parameters() const { return *params_; }

  /// Activations kept for backward().
  struct Trace {
    std::vector<Tensor> stage_inputs;
    std::vector<std::vector<std::uint32_t>> pool_args;
  };

  Tensor features(const Tensor& x, Trace* trace = nullptr) const;
  /// dL/dx given dL/dfeatures. Parameters receive no gradient.
  Tensor backward(const Trace& trace, const Tensor& dfeatures) const;

 private:
  enum class StageKind { normalize, conv, relu, pool };
  struct Stage {
    StageKind kind;
    std::size_t weight = 0;  // index into params_ (bias at weight + 1)
    ops::ConvGeometry geom{};
  };

  FeatureExtractor() = default;
  void check_input(const Tensor& x) const;

  ExtractorMode mode_{ExtractorMode::fixed_random};
  std::string tag_;
  std::vector<Stage> stages_;
  std::shared_ptr<const std::vector<Tensor>> params_;
  std::size_t tap_channels_ = 0;
  std::size_t min_extent_ = 1;
};

/// Default tap for each mode ("block3" / "relu3_3").
std::string default_layer_tag(ExtractorMode mode);

/// Pretrained mode reads `weights`, or ULW_VGG16_WEIGHTS when empty, and
/// throws EnvironmentError when neither names a readable file.
FeatureExtractor make_extractor(ExtractorMode mode, const std::string& layer_tag, std::uint64_t seed,
                                const std::filesystem::path& weights = {});

struct LossWeights {
  double mse = 1.0;
  double ssim = 1.0;
  double perceptual = 0.01;
};

struct LossConfig {
  LossWeights weights{};
  std::shared_ptr<const FeatureExtractor> extractor;
  metrics::SSIMConfig ssim{};

  /// Throws ConfigurationError on negative weights, all-zero weights, or a
  /// positive perceptual weight with no extractor.
  void validate_for_training() const;
};

/// Unweighted terms; a term whose weight is zero is never evaluated and
/// stays empty.
struct LossComponents {
  std::optional<double> mse;
  std::optional<double> ssim;
  std::optional<double> perceptual;
};

struct LossValue {
  double total = 0.0;
  LossComponents components;
};

double mse_loss(const Tensor& pred, const Tensor& target, Tensor* grad_pred = nullptr);

/// 1 - SSIM(pred, target).
double ssim_loss(const Tensor& pred, const Tensor& target, const metrics::SSIMConfig& cfg,
                 Tensor* grad_pred = nullptr);

/// Mean over feature elements of (phi(pred) - phi(target))^2.
double perceptual_loss(const FeatureExtractor& extractor, const Tensor& pred, const Tensor& target,
                       Tensor* grad_pred = nullptr);

/// total = w_mse * mse + w_ssim * ssim_loss + w_perc * perceptual. With
/// `grad_pred` non-null, writes d(total)/d(pred) there.
LossValue compound_loss(const LossConfig& cfg, const Tensor& pred, const Tensor& target, Tensor* grad_pred = nullptr);

}  // namespace ulw::losses
