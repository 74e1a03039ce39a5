#include "ulw/network.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "ulw/errors.hpp"
#include "ulw/rng.hpp"

namespace ulw::network {
namespace {

constexpr ops::ConvGeometry kConv3{3, 1, 1};
constexpr ops::ConvGeometry kConv1{1, 1, 0};

// Positions of each tensor in ModelParams::unet.
struct Layout {
  int depth;
  std::size_t down(int d, int conv) const { return static_cast<std::size_t>(4 * d + 2 * conv); }
  std::size_t bottleneck(int conv) const { return static_cast<std::size_t>(4 * depth + 2 * conv); }
  std::size_t up(int d, int slot) const {  // slot 0: transposed conv, 1/2: convs
    return static_cast<std::size_t>(4 * depth + 4 + 6 * (depth - 1 - d) + 2 * slot);
  }
  std::size_t head() const { return static_cast<std::size_t>(10 * depth + 4); }
};

Tensor he_normal(Shape s, double fan_in, double gain, Rng& rng) {
  Tensor t(s);
  const double stddev = gain * std::sqrt(1.0 / fan_in);
  for (double& v : t.values()) v = stddev * rng.normal();
  return t;
}

}  // namespace

void UNetConfig::validate() const {
  if (depth < 1 || depth > 6) throw ConfigurationError(fmt::format("U-Net depth must be in [1, 6], got {}", depth));
  if (base_channels < 1 || base_channels > 512) {
    throw ConfigurationError(fmt::format("U-Net base_channels must be in [1, 512], got {}", base_channels));
  }
  if (in_channels != 3 || out_channels != 3) throw ConfigurationError("U-Net maps 3 channels to 3 channels");
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : unet) n += t.value.size();
  if (wiener) n += wiener->kernel.size() + 1;
  return n;
}

std::vector<ParameterView> parameter_views(ModelParams& params) {
  std::vector<ParameterView> v;
  v.reserve(params.unet.size() + 2);
  for (auto& t : params.unet) v.push_back({t.name, t.value.values(), t.value.shape()});
  if (params.wiener) {
    v.push_back({"wiener.kernel", params.wiener->kernel.values(), params.wiener->kernel.shape()});
    v.push_back({"wiener.sigma2_raw", std::span<double>(&params.wiener->sigma2_raw, 1), Shape{1, 1, 1, 1}});
  }
  return v;
}

std::vector<ConstParameterView> parameter_views(const ModelParams& params) {
  std::vector<ConstParameterView> v;
  v.reserve(params.unet.size() + 2);
  for (const auto& t : params.unet) v.push_back({t.name, t.value.values(), t.value.shape()});
  if (params.wiener) {
    v.push_back({"wiener.kernel", params.wiener->kernel.values(), params.wiener->kernel.shape()});
    v.push_back({"wiener.sigma2_raw", std::span<const double>(&params.wiener->sigma2_raw, 1), Shape{1, 1, 1, 1}});
  }
  return v;
}

Gradients zero_gradients(const ModelParams& params) {
  Gradients g;
  g.reserve(params.unet.size() + 2);
  for (const auto& t : params.unet) g.emplace_back(t.value.shape());
  if (params.wiener) {
    g.emplace_back(params.wiener->kernel.shape());
    g.emplace_back(Shape{1, 1, 1, 1});
  }
  return g;
}

std::size_t unet_parameter_count(const UNetConfig& cfg) {
  cfg.validate();
  auto conv = [](std::size_t cin, std::size_t cout, std::size_t k) { return cin * cout * k * k + cout; };
  std::size_t total = 0;
  std::size_t cin = static_cast<std::size_t>(cfg.in_channels);
  for (int d = 0; d < cfg.depth; ++d) {
    const std::size_t c = cfg.channels_at(d);
    total += conv(cin, c, 3) + conv(c, c, 3);
    cin = c;
  }
  const std::size_t cb = cfg.channels_at(cfg.depth);
  total += conv(cin, cb, 3) + conv(cb, cb, 3);
  for (int d = cfg.depth - 1; d >= 0; --d) {
    const std::size_t c = cfg.channels_at(d), cup = cfg.channels_at(d + 1);
    total += conv(cup, c, 2) + conv(2 * c, c, 3) + conv(c, c, 3);
  }
  total += conv(cfg.channels_at(0), static_cast<std::size_t>(cfg.out_channels), 1);
  return total;
}

ModelParams build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.unet.validate();
  const UNetConfig& u = cfg.unet;
  ModelParams p;
  p.config = cfg;
  Rng rng(seed);
  auto add_conv = [&](std::string prefix, std::size_t cin, std::size_t cout, std::size_t k, double gain,
                      double bias) {
    p.unet.push_back({prefix + ".weight", he_normal(Shape{cout, cin, k, k}, static_cast<double>(cin * k * k), gain, rng)});
    p.unet.push_back({prefix + ".bias", Tensor(Shape{1, cout, 1, 1}, bias)});
  };
  const double relu_gain = std::sqrt(2.0);
  std::size_t cin = static_cast<std::size_t>(u.in_channels);
  for (int d = 0; d < u.depth; ++d) {
    const std::size_t c = u.channels_at(d);
    add_conv(fmt::format("down{}.conv1", d), cin, c, 3, relu_gain, 0.0);
    add_conv(fmt::format("down{}.conv2", d), c, c, 3, relu_gain, 0.0);
    cin = c;
  }
  const std::size_t cb = u.channels_at(u.depth);
  add_conv("bottleneck.conv1", cin, cb, 3, relu_gain, 0.0);
  add_conv("bottleneck.conv2", cb, cb, 3, relu_gain, 0.0);
  for (int d = u.depth - 1; d >= 0; --d) {
    const std::size_t c = u.channels_at(d), cup = u.channels_at(d + 1);
    p.unet.push_back({fmt::format("up{}.deconv.weight", d),
                      he_normal(Shape{cup, c, 2, 2}, static_cast<double>(cup), 1.0, rng)});
    p.unet.push_back({fmt::format("up{}.deconv.bias", d), Tensor(Shape{1, c, 1, 1})});
    add_conv(fmt::format("up{}.conv1", d), 2 * c, c, 3, relu_gain, 0.0);
    add_conv(fmt::format("up{}.conv2", d), c, c, 3, relu_gain, 0.0);
  }
  add_conv("head", u.channels_at(0), static_cast<std::size_t>(u.out_channels), 1, 1.0, 0.5);

  if (cfg.with_wiener) {
    const auto& w = cfg.wiener;
    p.wiener = wiener::init_wiener(w.kernel_size, static_cast<std::size_t>(u.out_channels), w.gaussian_std,
                                   w.sigma2_init, w.epsilon);
  }
  return p;
}

void check_input(const UNetConfig& cfg, const Tensor& x) {
  const Shape& s = x.shape();
  if (s.c != static_cast<std::size_t>(cfg.in_channels)) {
    throw DimensionError(fmt::format("U-Net expects {} input channels, got {}", cfg.in_channels, s.c));
  }
  const std::size_t m = cfg.required_multiple();
  if (s.h == 0 || s.w == 0 || s.h % m || s.w % m) {
    throw DimensionError(fmt::format("input {}x{} must have height and width divisible by {} (2^depth, depth {})",
                                     s.w, s.h, m, cfg.depth));
  }
}

namespace {

Tensor conv_forward(const ModelParams& p, std::size_t idx, const Tensor& x, ops::ConvGeometry g, ConvTrace* trace,
                    bool activate) {
  Tensor pre = ops::conv2d(x, p.unet[idx].value, &p.unet[idx + 1].value, g);
  Tensor out = activate ? ops::activate(pre, p.config.unet.activation) : pre;
  if (trace) {
    trace->input = x;
    trace->pre = std::move(pre);
  }
  return out;
}

Tensor conv_backward(const ModelParams& p, std::size_t idx, const ConvTrace& t, const Tensor& dy, Gradients& grads,
                     bool need_dx = true) {
  const Tensor dpre = ops::activate_backward(t.pre, dy, p.config.unet.activation);
  return ops::conv2d_backward(t.input, p.unet[idx].value, dpre, kConv3, grads[idx], &grads[idx + 1], need_dx);
}

}  // namespace

Tensor unet_forward(const ModelParams& params, const Tensor& x, UNetTrace* trace) {
  const UNetConfig& u = params.config.unet;
  check_input(u, x);
  const Layout L{u.depth};
  UNetTrace local;
  UNetTrace& tr = trace ? *trace : local;
  const bool keep = trace != nullptr;
  tr.down.assign(static_cast<std::size_t>(u.depth), {});
  tr.up.assign(static_cast<std::size_t>(u.depth), {});
  tr.skip_concatenations = 0;

  std::vector<Tensor> skips(static_cast<std::size_t>(u.depth));
  Tensor cur = x;
  for (int d = 0; d < u.depth; ++d) {
    auto& lvl = tr.down[static_cast<std::size_t>(d)];
    cur = conv_forward(params, L.down(d, 0), cur, kConv3, keep ? &lvl.conv1 : nullptr, true);
    cur = conv_forward(params, L.down(d, 1), cur, kConv3, keep ? &lvl.conv2 : nullptr, true);
    skips[static_cast<std::size_t>(d)] = cur;
    cur = ops::max_pool2x2(cur, lvl.pool_arg);
  }
  cur = conv_forward(params, L.bottleneck(0), cur, kConv3, keep ? &tr.bottleneck1 : nullptr, true);
  cur = conv_forward(params, L.bottleneck(1), cur, kConv3, keep ? &tr.bottleneck2 : nullptr, true);
  for (int d = u.depth - 1; d >= 0; --d) {
    auto& lvl = tr.up[static_cast<std::size_t>(d)];
    const std::size_t up = L.up(d, 0);
    if (keep) lvl.up_input = cur;
    cur = ops::conv_transpose2x2(cur, params.unet[up].value, params.unet[up + 1].value);
    cur = ops::concat_channels(cur, skips[static_cast<std::size_t>(d)]);
    ++tr.skip_concatenations;
    cur = conv_forward(params, L.up(d, 1), cur, kConv3, keep ? &lvl.conv1 : nullptr, true);
    cur = conv_forward(params, L.up(d, 2), cur, kConv3, keep ? &lvl.conv2 : nullptr, true);
  }
  if (keep) tr.head_input = cur;
  return ops::conv2d(cur, params.unet[L.head()].value, &params.unet[L.head() + 1].value, kConv1);
}

void unet_backward(const ModelParams& params, const UNetTrace& trace, const Tensor& dy, Gradients& grads) {
  const UNetConfig& u = params.config.unet;
  const Layout L{u.depth};
  const std::size_t h = L.head();
  Tensor g = ops::conv2d_backward(trace.head_input, params.unet[h].value, dy, kConv1, grads[h], &grads[h + 1]);

  std::vector<Tensor> dskips(static_cast<std::size_t>(u.depth));
  for (int d = 0; d < u.depth; ++d) {
    const auto& lvl = trace.up[static_cast<std::size_t>(d)];
    g = conv_backward(params, L.up(d, 2), lvl.conv2, g, grads);
    g = conv_backward(params, L.up(d, 1), lvl.conv1, g, grads);
    Tensor dup;
    ops::split_channels(g, u.channels_at(d), dup, dskips[static_cast<std::size_t>(d)]);
    const std::size_t up = L.up(d, 0);
    g = ops::conv_transpose2x2_backward(lvl.up_input, params.unet[up].value, dup, grads[up], grads[up + 1]);
  }
  g = conv_backward(params, L.bottleneck(1), trace.bottleneck2, g, grads);
  g = conv_backward(params, L.bottleneck(0), trace.bottleneck1, g, grads);
  for (int d = u.depth - 1; d >= 0; --d) {
    const auto& lvl = trace.down[static_cast<std::size_t>(d)];
    g = ops::max_pool2x2_backward(g, lvl.pool_arg, lvl.conv2.pre.shape());
    const Tensor& skip = dskips[static_cast<std::size_t>(d)];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += skip[i];
    g = conv_backward(params, L.down(d, 1), lvl.conv2, g, grads);
    g = conv_backward(params, L.down(d, 0), lvl.conv1, g, grads, d > 0);
  }
}

ImageBatch model_forward(const ModelParams& params, const Tensor& x, ModelTrace* trace, bool bypass_wiener) {
  ModelTrace local;
  ModelTrace& tr = trace ? *trace : local;
  Tensor u = unet_forward(params, x, trace ? &tr.unet : nullptr);
  tr.used_wiener = params.wiener.has_value() && !bypass_wiener;
  Tensor y = tr.used_wiener ? wiener::wiener_forward(*params.wiener, u, trace ? &tr.filtered : nullptr) : u;
  if (trace) {
    tr.unet_out = std::move(u);
    tr.pre_clamp = y;
  }
  for (double& v : y.values()) v = std::clamp(v, 0.0, 1.0);
  return y;
}

void model_backward(const ModelParams& params, const ModelTrace& trace, const Tensor& dout, Gradients& grads) {
  Tensor g(dout.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double v = trace.pre_clamp[i];
    g[i] = (v >= 0.0 && v <= 1.0) ? dout[i] : 0.0;
  }
  if (trace.used_wiener) {
    wiener::WienerGrads wg(*params.wiener);
    g = wiener::wiener_backward(*params.wiener, trace.unet_out, trace.filtered, g, wg);
    const std::size_t k = params.unet.size();
    for (std::size_t i = 0; i < wg.kernel.size(); ++i) grads[k][i] += wg.kernel[i];
    grads[k + 1][0] += wg.sigma2_raw;
  }
  unet_backward(params, trace.unet, g, grads);
}

}  // namespace ulw::network
