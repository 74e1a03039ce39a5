#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ulw/ops.hpp"
#include "ulw/tensor.hpp"
#include "ulw/wiener.hpp"

namespace ulw::network {

/// U-Net recipe: per level two 3x3 convs + activation, 2x2 max-pool down,
/// 2x2 stride-2 transposed conv up, channel-concatenated skips, 1x1 head.
/// Level d has base_channels * 2^d channels; the bottleneck sits at d = depth.
struct UNetConfig {
  int depth = 3;
  int base_channels = 32;
  int in_channels = 3;
  int out_channels = 3;
  ops::Activation activation = ops::Activation::relu;

  void validate() const;  // ConfigurationError
  std::size_t required_multiple() const { return std::size_t{1} << depth; }
  std::size_t channels_at(int level) const { return static_cast<std::size_t>(base_channels) << level; }
};

struct WienerConfig {
  int kernel_size = 5;
  double gaussian_std = 1.0;
  double sigma2_init = 1e-3;
  double epsilon = 1e-6;
};

struct ModelConfig {
  UNetConfig unet{};
  bool with_wiener = true;
  WienerConfig wiener{};
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct ModelParams {
  ModelConfig config;
  std::vector<NamedTensor> unet;
  std::optional<wiener::WienerParams> wiener;

  std::size_t parameter_count() const;
};

/// Every trainable scalar of a model as (name, view) pairs in a fixed order:
/// U-Net tensors, then "wiener.kernel" and "wiener.sigma2_raw".
struct ParameterView {
  std::string_view name;
  std::span<double> values;
  Shape shape;
};
std::vector<ParameterView> parameter_views(ModelParams& params);

struct ConstParameterView {
  std::string_view name;
  std::span<const double> values;
  Shape shape;
};
std::vector<ConstParameterView> parameter_views(const ModelParams& params);

/// Zero-filled gradient buffers aligned with parameter_views().
using Gradients = std::vector<Tensor>;
Gradients zero_gradients(const ModelParams& params);

/// Closed-form trainable parameter count of the U-Net recipe (Wiener excluded).
std::size_t unet_parameter_count(const UNetConfig& cfg);

/// Deterministic initialisation: He-normal convs drawn from one seeded stream
/// in layer order, zero biases except the head (0.5). The Wiener block, when
/// present, is the deterministic Gaussian init, so with/without Wiener models
/// from the same seed share identical U-Net weights.
ModelParams build_model(const ModelConfig& cfg, std::uint64_t seed);

struct ConvTrace {
  Tensor input;
  Tensor pre;  // before activation
};

struct UNetTrace {
  struct Down {
    ConvTrace conv1, conv2;
    std::vector<std::uint32_t> pool_arg;
  };
  struct Up {
    Tensor up_input;
    ConvTrace conv1, conv2;
  };
  std::vector<Down> down;
  ConvTrace bottleneck1, bottleneck2;
  std::vector<Up> up;  // up[d] serves level d
  Tensor head_input;
  std::size_t skip_concatenations = 0;
};

/// Throws DimensionError unless H and W are multiples of 2^depth and the
/// channel count matches.
void check_input(const UNetConfig& cfg, const Tensor& x);

Tensor unet_forward(const ModelParams& params, const Tensor& x, UNetTrace* trace = nullptr);
/// Accumulates U-Net parameter gradients into `grads`.
void unet_backward(const ModelParams& params, const UNetTrace& trace, const Tensor& dy, Gradients& grads);

struct ModelTrace {
  UNetTrace unet;
  Tensor unet_out;
  Tensor filtered;  // Wiener s
  Tensor pre_clamp;
  bool used_wiener = false;
};

/// clamp_[0,1](wiener(unet(x))), or clamp(unet(x)) without a Wiener block or
/// when `bypass_wiener` is set.
ImageBatch model_forward(const ModelParams& params, const Tensor& x, ModelTrace* trace = nullptr,
                         bool bypass_wiener = false);

/// Back-propagates dL/d(output) through clamp, Wiener and U-Net.
void model_backward(const ModelParams& params, const ModelTrace& trace, const Tensor& dout, Gradients& grads);

}  // namespace ulw::network
