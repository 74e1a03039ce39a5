#include "ulw/losses.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "ulw/errors.hpp"
#include "ulw/kernels.hpp"
#include "ulw/rng.hpp"

namespace ulw::losses {
namespace fs = std::filesystem;

ExtractorMode parse_extractor_mode(std::string_view name) {
  if (name == "fixed-random") return ExtractorMode::fixed_random;
  if (name == "pretrained") return ExtractorMode::pretrained;
  throw ConfigurationError(fmt::format("unknown extractor mode '{}' (expected fixed-random or pretrained)", name));
}

std::string_view extractor_mode_name(ExtractorMode m) {
  return m == ExtractorMode::fixed_random ? "fixed-random" : "pretrained";
}

std::string default_layer_tag(ExtractorMode mode) {
  return mode == ExtractorMode::fixed_random ? "block3" : "relu3_3";
}

namespace {

constexpr std::array<double, 3> kImageNetMean{0.485, 0.456, 0.406};
constexpr std::array<double, 3> kImageNetStd{0.229, 0.224, 0.225};

struct VggConv {
  const char* tag;
  std::size_t cin, cout;
  bool pool_before;
};

// torchvision vgg16.features up to relu3_3
constexpr std::array<VggConv, 7> kVgg16{{{"relu1_1", 3, 64, false},
                                         {"relu1_2", 64, 64, false},
                                         {"relu2_1", 64, 128, true},
                                         {"relu2_2", 128, 128, false},
                                         {"relu3_1", 128, 256, true},
                                         {"relu3_2", 256, 256, false},
                                         {"relu3_3", 256, 256, false}}};

constexpr char kVggMagic[8] = {'U', 'L', 'W', 'V', 'G', 'G', '1', '6'};

}  // namespace

FeatureExtractor FeatureExtractor::fixed_random(const std::string& layer_tag, std::uint64_t seed) {
  static constexpr std::array<std::size_t, 4> channels{3, 16, 32, 64};
  int blocks = 0;
  for (int b = 1; b <= 3; ++b) {
    if (layer_tag == fmt::format("block{}", b)) blocks = b;
  }
  if (blocks == 0) {
    throw ConfigurationError(fmt::format("unknown fixed-random tap '{}' (expected block1..block3)", layer_tag));
  }
  FeatureExtractor fe;
  fe.mode_ = ExtractorMode::fixed_random;
  fe.tag_ = layer_tag;
  auto params = std::make_shared<std::vector<Tensor>>();
  Rng rng(seed);
  for (int b = 0; b < blocks; ++b) {
    const std::size_t cin = channels[static_cast<std::size_t>(b)], cout = channels[static_cast<std::size_t>(b) + 1];
    Tensor w(Shape{cout, cin, 3, 3});
    const double stddev = std::sqrt(2.0 / static_cast<double>(cin * 9));
    for (double& v : w.values()) v = stddev * rng.normal();
    Tensor bias(Shape{1, cout, 1, 1});
    for (double& v : bias.values()) v = 0.01 * rng.normal();
    fe.stages_.push_back({StageKind::conv, params->size(), {3, 2, 1}});
    fe.stages_.push_back({StageKind::relu});
    params->push_back(std::move(w));
    params->push_back(std::move(bias));
  }
  fe.params_ = std::move(params);
  fe.tap_channels_ = channels[static_cast<std::size_t>(blocks)];
  fe.min_extent_ = std::size_t{1} << blocks;
  return fe;
}

FeatureExtractor FeatureExtractor::pretrained_vgg16(const std::string& layer_tag, const fs::path& weights) {
  std::size_t layers = 0;
  for (std::size_t i = 0; i < kVgg16.size(); ++i) {
    if (layer_tag == kVgg16[i].tag) layers = i + 1;
  }
  if (layers == 0) {
    throw ConfigurationError(fmt::format("unknown VGG-16 tap '{}' (expected relu1_1..relu3_3)", layer_tag));
  }
  std::ifstream in(weights, std::ios::binary);
  if (!in) {
    throw EnvironmentError(fmt::format("pretrained VGG-16 weights not readable at '{}'; set ULW_VGG16_WEIGHTS or use "
                                       "extractor mode fixed-random",
                                       weights.string()));
  }
  static_assert(std::endian::native == std::endian::little, "weight files are little-endian");
  char magic[8];
  std::uint32_t version = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), 4);
  if (!in || std::memcmp(magic, kVggMagic, 8) != 0 || version != 1) {
    throw FormatError(fmt::format("'{}' is not a ULWVGG16 v1 weight file", weights.string()));
  }

  FeatureExtractor fe;
  fe.mode_ = ExtractorMode::pretrained;
  fe.tag_ = layer_tag;
  auto params = std::make_shared<std::vector<Tensor>>();
  fe.stages_.push_back({StageKind::normalize});
  std::size_t pools = 0;
  std::vector<float> buf;
  auto read_tensor = [&](Shape s) {
    buf.resize(s.size());
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw FormatError(fmt::format("'{}' is truncated", weights.string()));
    Tensor t(s);
    for (std::size_t i = 0; i < buf.size(); ++i) t[i] = buf[i];
    return t;
  };
  // The file always carries all seven layers; only those up to the tap are kept.
  for (std::size_t i = 0; i < kVgg16.size(); ++i) {
    const auto& L = kVgg16[i];
    Tensor w = read_tensor(Shape{L.cout, L.cin, 3, 3});
    Tensor b = read_tensor(Shape{1, L.cout, 1, 1});
    if (i >= layers) continue;
    if (L.pool_before) {
      fe.stages_.push_back({StageKind::pool});
      ++pools;
    }
    fe.stages_.push_back({StageKind::conv, params->size(), {3, 1, 1}});
    fe.stages_.push_back({StageKind::relu});
    params->push_back(std::move(w));
    params->push_back(std::move(b));
  }
  fe.params_ = std::move(params);
  fe.tap_channels_ = kVgg16[layers - 1].cout;
  fe.min_extent_ = std::size_t{1} << pools;
  return fe;
}

void FeatureExtractor::check_input(const Tensor& x) const {
  const Shape& s = x.shape();
  if (s.c != 3) throw DimensionError(fmt::format("feature extractor expects 3 channels, got {}", s.c));
  if (s.h < min_extent_ || s.w < min_extent_ || s.h % min_extent_ || s.w % min_extent_) {
    throw DimensionError(fmt::format("input {}x{} too small for tap '{}' (needs multiples of {})", s.w, s.h, tag_,
                                     min_extent_));
  }
}

Tensor FeatureExtractor::features(const Tensor& x, Trace* trace) const {
  check_input(x);
  if (trace) {
    trace->stage_inputs.clear();
    trace->pool_args.clear();
  }
  Tensor cur = x;
  for (const auto& st : stages_) {
    if (trace) trace->stage_inputs.push_back(cur);
    switch (st.kind) {
      case StageKind::normalize: {
        for (std::size_t n = 0; n < cur.shape().n; ++n) {
          for (std::size_t c = 0; c < 3; ++c) {
            double* p = cur.plane(n, c);
            for (std::size_t i = 0; i < cur.shape().plane(); ++i) p[i] = (p[i] - kImageNetMean[c]) / kImageNetStd[c];
          }
        }
        break;
      }
      case StageKind::conv:
        cur = ops::conv2d(cur, (*params_)[st.weight], &(*params_)[st.weight + 1], st.geom);
        break;
      case StageKind::relu:
        cur = ops::activate(cur, ops::Activation::relu);
        break;
      case StageKind::pool: {
        std::vector<std::uint32_t> arg;
        cur = ops::max_pool2x2(cur, arg);
        if (trace) trace->pool_args.push_back(std::move(arg));
        break;
      }
    }
  }
  return cur;
}

Tensor FeatureExtractor::backward(const Trace& trace, const Tensor& dfeatures) const {
  Tensor grad = dfeatures;
  std::size_t pool = trace.pool_args.size();
  for (std::size_t i = stages_.size(); i-- > 0;) {
    const auto& st = stages_[i];
    const Tensor& in = trace.stage_inputs[i];
    switch (st.kind) {
      case StageKind::normalize:
        for (std::size_t n = 0; n < grad.shape().n; ++n) {
          for (std::size_t c = 0; c < 3; ++c) {
            double* p = grad.plane(n, c);
            for (std::size_t j = 0; j < grad.shape().plane(); ++j) p[j] /= kImageNetStd[c];
          }
        }
        break;
      case StageKind::conv: {
        Tensor unused_w((*params_)[st.weight].shape());
        grad = ops::conv2d_backward(in, (*params_)[st.weight], grad, st.geom, unused_w, nullptr);
        break;
      }
      case StageKind::relu:
        grad = ops::activate_backward(in, grad, ops::Activation::relu);
        break;
      case StageKind::pool:
        grad = ops::max_pool2x2_backward(grad, trace.pool_args[--pool], in.shape());
        break;
    }
  }
  return grad;
}

FeatureExtractor make_extractor(ExtractorMode mode, const std::string& layer_tag, std::uint64_t seed,
                                const fs::path& weights) {
  const std::string tag = layer_tag.empty() ? default_layer_tag(mode) : layer_tag;
  if (mode == ExtractorMode::fixed_random) return FeatureExtractor::fixed_random(tag, seed);
  fs::path path = weights;
  if (path.empty()) {
    if (const char* env = std::getenv("ULW_VGG16_WEIGHTS")) path = env;
  }
  if (path.empty()) {
    throw EnvironmentError(
        "pretrained extractor needs VGG-16 weights: pass a weights file or set ULW_VGG16_WEIGHTS, or use extractor "
        "mode fixed-random");
  }
  return FeatureExtractor::pretrained_vgg16(tag, path);
}

void LossConfig::validate_for_training() const {
  const auto& w = weights;
  for (double v : {w.mse, w.ssim, w.perceptual}) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigurationError(fmt::format("loss weight {} must be >= 0", v));
  }
  if (w.mse == 0.0 && w.ssim == 0.0 && w.perceptual == 0.0) {
    throw ConfigurationError("all loss weights are zero; at least one term must be active");
  }
  if (w.perceptual > 0.0 && !extractor) throw ConfigurationError("perceptual weight > 0 but no feature extractor");
  ssim.validate();
}

double mse_loss(const Tensor& pred, const Tensor& target, Tensor* grad_pred) {
  const double value = metrics::mse(pred, target);
  if (grad_pred) {
    *grad_pred = Tensor(pred.shape());
    const double scale = 2.0 / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) (*grad_pred)[i] = scale * (pred[i] - target[i]);
  }
  return value;
}

double ssim_loss(const Tensor& pred, const Tensor& target, const metrics::SSIMConfig& cfg, Tensor* grad_pred) {
  const double s = metrics::ssim(pred, target, cfg, grad_pred);
  if (grad_pred) {
    for (double& g : grad_pred->values()) g = -g;
  }
  return 1.0 - s;
}

double perceptual_loss(const FeatureExtractor& extractor, const Tensor& pred, const Tensor& target, Tensor* grad_pred) {
  require_same_shape(pred, target, "perceptual_loss");
  FeatureExtractor::Trace trace;
  const Tensor fp = extractor.features(pred, grad_pred ? &trace : nullptr);
  const Tensor ft = extractor.features(target);
  const double count = static_cast<double>(fp.size());
  const double value = kernels::active().sum_sq_diff(fp.data(), ft.data(), fp.size()) / count;
  if (grad_pred) {
    Tensor dfeat(fp.shape());
    for (std::size_t i = 0; i < fp.size(); ++i) dfeat[i] = 2.0 * (fp[i] - ft[i]) / count;
    *grad_pred = extractor.backward(trace, dfeat);
  }
  return value;
}

LossValue compound_loss(const LossConfig& cfg, const Tensor& pred, const Tensor& target, Tensor* grad_pred) {
  require_same_shape(pred, target, "compound_loss");
  LossValue out;
  if (grad_pred) *grad_pred = Tensor(pred.shape());
  Tensor term_grad;
  auto add = [&](double weight, double value, std::optional<double>& slot) {
    slot = value;
    out.total += weight * value;
    if (grad_pred) kernels::active().axpy(weight, term_grad.data(), grad_pred->data(), term_grad.size());
  };
  Tensor* tg = grad_pred ? &term_grad : nullptr;
  const auto& w = cfg.weights;
  if (w.mse > 0.0) add(w.mse, mse_loss(pred, target, tg), out.components.mse);
  if (w.ssim > 0.0) add(w.ssim, ssim_loss(pred, target, cfg.ssim, tg), out.components.ssim);
  if (w.perceptual > 0.0) {
    if (!cfg.extractor) throw ConfigurationError("perceptual weight > 0 but no feature extractor");
    add(w.perceptual, perceptual_loss(*cfg.extractor, pred, target, tg), out.components.perceptual);
  }
  return out;
}

}  // namespace ulw::losses
