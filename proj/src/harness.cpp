#include "ulw/harness.hpp"

#include <fmt/format.h>

#include <cmath>
#include <numeric>
#include <ostream>

#include "ulw/errors.hpp"
#include "ulw/rng.hpp"

namespace ulw::harness {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

std::vector<std::size_t> epoch_permutation(std::uint64_t seed, std::size_t n, std::uint64_t epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(splitmix64(seed ^ splitmix64(epoch)));
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  return perm;
}

void write_optional(std::ostream& out, const std::optional<double>& v) {
  out << ',';
  if (v) out << metrics::format_value(*v);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  return splitmix64(splitmix64(seed) ^ fnv1a(stream));
}

void write_history_csv(std::ostream& out, const std::vector<HistoryRow>& history, bool header) {
  if (header) out << "step,total,mse,ssim,perc\n";
  for (const auto& row : history) {
    out << row.step << ',' << metrics::format_value(row.total);
    write_optional(out, row.components.mse);
    write_optional(out, row.components.ssim);
    write_optional(out, row.components.perceptual);
    out << '\n';
  }
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t dataset_size, std::size_t batch_size,
                                       std::uint64_t step) {
  if (dataset_size == 0 || batch_size == 0) throw ParameterError("batch_indices: empty dataset or batch");
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  std::uint64_t cached_epoch = UINT64_MAX;
  std::vector<std::size_t> perm;
  for (std::size_t j = 0; j < batch_size; ++j) {
    const std::uint64_t pos = step * batch_size + j;
    const std::uint64_t epoch = pos / dataset_size;
    if (epoch != cached_epoch) {
      perm = epoch_permutation(seed, dataset_size, epoch);
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % dataset_size]);
  }
  return out;
}

void adam_step(network::ModelParams& params, const network::Gradients& grads, network::OptimizerState& state,
               const config::OptimizerConfig& opt) {
  auto views = network::parameter_views(params);
  if (grads.size() != views.size()) throw ParameterError("adam_step: gradient count does not match parameters");
  if (state.m.empty()) {
    for (const auto& g : grads) {
      state.m.emplace_back(g.shape());
      state.v.emplace_back(g.shape());
    }
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(opt.beta1, t);
  const double bc2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t k = 0; k < views.size(); ++k) {
    auto p = views[k].values;
    const auto g = grads[k].values();
    auto m = state.m[k].values();
    auto v = state.v[k].values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
      p[i] -= opt.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt.epsilon);
    }
  }
}

TrainResult train(const config::ExperimentConfig& cfg, const image::PairedDataset& train_data, TrainOptions options) {
  cfg.validate();
  const losses::LossConfig loss_cfg = config::make_loss_config(cfg.loss);
  loss_cfg.validate_for_training();
  network::check_input(cfg.model.unet, train_data[0].smoky);

  TrainResult result;
  network::Checkpoint& ckpt = result.checkpoint;
  const std::string hash = config::config_hash(cfg);
  if (options.resume) {
    if (options.resume->config_hash != hash) {
      throw CheckpointError(fmt::format("cannot resume: checkpoint config hash {} differs from {}",
                                        options.resume->config_hash, hash));
    }
    ckpt = std::move(*options.resume);
  } else {
    ckpt.params = network::build_model(cfg.model, derive_seed(cfg.seed, "init"));
  }
  ckpt.config_hash = hash;
  ckpt.config_json = config::canonical_json(cfg);

  const std::uint64_t batch_seed = derive_seed(cfg.seed, "batches");
  const std::size_t n = train_data.size();
  std::vector<Tensor> smoky, clean;
  for (std::uint64_t step = ckpt.step; step < cfg.optimizer.steps; ++step) {
    smoky.clear();
    clean.clear();
    for (std::size_t i : batch_indices(batch_seed, n, cfg.optimizer.batch_size, step)) {
      smoky.push_back(train_data[i].smoky);
      clean.push_back(train_data[i].clean);
    }
    const Tensor x = stack(smoky);
    const Tensor y = stack(clean);

    network::ModelTrace trace;
    const Tensor pred = network::model_forward(ckpt.params, x, &trace);
    Tensor dpred;
    const losses::LossValue loss = losses::compound_loss(loss_cfg, pred, y, &dpred);
    if (!std::isfinite(loss.total)) {
      throw TrainingError(fmt::format("non-finite loss {} at step {}", loss.total, step));
    }
    network::Gradients grads = network::zero_gradients(ckpt.params);
    network::model_backward(ckpt.params, trace, dpred, grads);
    adam_step(ckpt.params, grads, ckpt.optimizer, cfg.optimizer);
    ckpt.step = step + 1;

    result.history.push_back({step, loss.total, loss.components});
    if (options.checkpoint_every > 0 && options.on_checkpoint && ckpt.step % options.checkpoint_every == 0) {
      options.on_checkpoint(ckpt);
    }
    if (options.on_step && !options.on_step(result.history.back())) break;
  }
  return result;
}

Evaluation evaluate(const network::ModelParams& params, const image::PairedDataset& data) {
  Evaluation ev;
  ev.records.reserve(data.size());
  for (const auto& s : data.samples()) {
    const ImageBatch pred = network::model_forward(params, s.smoky);
    ev.records.push_back(metrics::evaluate_pair(pred, s.clean, s.id));
  }
  ev.summary = metrics::aggregate(ev.records);
  return ev;
}

Evaluation evaluate_identity(const image::PairedDataset& data) {
  Evaluation ev;
  ev.records.reserve(data.size());
  for (const auto& s : data.samples()) ev.records.push_back(metrics::evaluate_pair(s.smoky, s.clean, s.id));
  ev.summary = metrics::aggregate(ev.records);
  return ev;
}

image::PairedDataset load_dataset(const config::ExperimentConfig& cfg) {
  if (cfg.dataset.source == config::DatasetSource::manifest) return image::load_paired_dataset(cfg.dataset.manifest);
  return image::make_synthetic_dataset(cfg.dataset.synthetic);
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::no_wiener: return "no_wiener";
    case Variant::no_ssim_loss: return "no_ssim_loss";
    case Variant::no_perceptual_loss: return "no_perceptual_loss";
    case Variant::full_ulw: return "full_ulw";
  }
  return "?";
}

std::string_view variant_label(Variant v) {
  switch (v) {
    case Variant::no_wiener: return "w/o Learnable Wiener filter";
    case Variant::no_ssim_loss: return "w/o SSIM loss";
    case Variant::no_perceptual_loss: return "w/o Perceptual loss";
    case Variant::full_ulw: return "Full ULW";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kVariants) {
    if (variant_name(v) == name) return v;
  }
  throw ParameterError(fmt::format("unknown variant \"{}\"", name));
}

config::ExperimentConfig variant_config(const config::ExperimentConfig& base, Variant v) {
  config::ExperimentConfig c = base;
  switch (v) {
    case Variant::no_wiener: c.model.with_wiener = false; break;
    case Variant::no_ssim_loss: c.loss.weights.ssim = 0.0; break;
    case Variant::no_perceptual_loss: c.loss.weights.perceptual = 0.0; break;
    case Variant::full_ulw: break;
  }
  return c;
}

AblationResult run_ablation(const config::ExperimentConfig& base, const image::PairedDataset& data,
                            const std::function<void(Variant, const HistoryRow&)>& on_step) {
  base.validate();
  AblationResult out{.report = {},
                     .runs = {},
                     .split = image::split_dataset(data, base.dataset.split, derive_seed(base.seed, "split"))};
  out.report.config_hash = config::config_hash(base);
  out.report.dataset_fingerprint = image::dataset_fingerprint(data);
  out.report.baseline = evaluate_identity(out.split.test).summary.mean;

  for (Variant v : kVariants) {
    const config::ExperimentConfig vc = variant_config(base, v);
    TrainOptions opts;
    if (on_step) {
      opts.on_step = [&](const HistoryRow& row) {
        on_step(v, row);
        return true;
      };
    }
    VariantRun run{v, {}, {}};
    try {
      run.training = train(vc, out.split.train, std::move(opts));
      run.evaluation = evaluate(run.training.checkpoint.params, out.split.test);
    } catch (const Error& e) {
      throw TrainingError(fmt::format("variant {} failed: {}", variant_name(v), e.what()));
    }
    out.report.rows.push_back({v, run.evaluation.summary.mean});
    out.runs.push_back(std::move(run));
  }
  return out;
}

}  // namespace ulw::harness
