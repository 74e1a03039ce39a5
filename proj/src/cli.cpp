#include "ulw/cli.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "ulw/checkpoint.hpp"
#include "ulw/config.hpp"
#include "ulw/errors.hpp"
#include "ulw/gradcheck.hpp"
#include "ulw/harness.hpp"
#include "ulw/report.hpp"

namespace ulw::cli {
namespace {

namespace fs = std::filesystem;

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* sub, CommonOptions& o, bool with_config = true) {
  if (with_config) sub->add_option("--config", o.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  sub->add_option("--seed", o.seed, "Override the experiment seed");
  sub->add_option("--out", o.out, "Output directory");
}

config::ExperimentConfig resolve_config(const CommonOptions& o) {
  config::ExperimentConfig cfg = o.config_path.empty() ? config::ExperimentConfig{} : config::load_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.output_dir = o.out;
  cfg.validate();
  return cfg;
}

fs::path prepare_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir, ec.message()));
  return p;
}

void write_history(const fs::path& path, const std::vector<harness::HistoryRow>& rows, bool append) {
  const bool header = !append || !fs::exists(path);
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  harness::write_history_csv(out, rows, header);
}

// Progress goes to stderr so stdout carries only results.
std::function<bool(const harness::HistoryRow&)> progress(std::ostream& err, std::string prefix, std::uint64_t steps) {
  return [&err, prefix = std::move(prefix), steps](const harness::HistoryRow& row) {
    if ((row.step + 1) % 100 == 0 || row.step + 1 == steps) {
      fmt::print(err, "{}step {}/{} loss {:.6f}\n", prefix, row.step + 1, steps, row.total);
    }
    return true;
  };
}

int cmd_train(const CommonOptions& o, const std::string& resume, std::uint64_t checkpoint_every, std::ostream& out,
              std::ostream& err) {
  const auto cfg = resolve_config(o);
  const fs::path dir = prepare_dir(cfg.output_dir);
  const auto data = harness::load_dataset(cfg);
  const auto split = image::split_dataset(data, cfg.dataset.split, harness::derive_seed(cfg.seed, "split"));

  harness::TrainOptions opts;
  if (!resume.empty()) opts.resume = network::load_checkpoint_for_resume(resume, config::config_hash(cfg));
  opts.on_step = progress(err, "", cfg.optimizer.steps);
  opts.checkpoint_every = checkpoint_every;
  opts.on_checkpoint = [&](const network::Checkpoint& c) { network::save_checkpoint(c, dir / "checkpoint.bin"); };

  const auto result = harness::train(cfg, split.train, std::move(opts));
  network::save_checkpoint(result.checkpoint, dir / "checkpoint.bin");
  write_history(dir / "history.csv", result.history, !resume.empty());
  report::write_text(dir / "config.json", config::canonical_json(cfg) + "\n");
  fmt::print(out, "trained {} steps; checkpoint {}\n", result.checkpoint.step, (dir / "checkpoint.bin").string());
  return 0;
}

int cmd_evaluate(const CommonOptions& o, const std::string& checkpoint, const std::string& which, std::ostream& out) {
  const auto cfg = resolve_config(o);
  const auto ckpt = network::load_checkpoint(checkpoint);
  const auto data = harness::load_dataset(cfg);
  std::optional<image::PairedDataset> subset;
  if (which == "all") {
    subset = data;
  } else {
    auto split = image::split_dataset(data, cfg.dataset.split, harness::derive_seed(cfg.seed, "split"));
    subset = which == "train" ? split.train : which == "val" ? split.val : split.test;
  }
  const auto ev = harness::evaluate(ckpt.params, *subset);
  std::ostringstream csv;
  metrics::write_metrics_csv(csv, ev.records);
  if (!o.out.empty()) {
    report::write_text(prepare_dir(o.out) / "metrics.csv", csv.str());
  }
  const auto& m = ev.summary.mean;
  fmt::print(out, "{}mean over {} pairs: ssim {} psnr_db {} mse {} ciede2000 {}\n", csv.str(), ev.summary.count,
             report::format_metric(m.ssim), report::format_metric(m.psnr_db), report::format_metric(m.mse),
             report::format_metric(m.ciede2000));
  return 0;
}

int cmd_ablate(const CommonOptions& o, std::ostream& out, std::ostream& err) {
  const auto cfg = resolve_config(o);
  const fs::path dir = prepare_dir(cfg.output_dir);
  const auto data = harness::load_dataset(cfg);
  const auto result = harness::run_ablation(cfg, data, [&](harness::Variant v, const harness::HistoryRow& row) {
    progress(err, fmt::format("[{}] ", harness::variant_name(v)), cfg.optimizer.steps)(row);
  });

  std::map<harness::Variant, const network::ModelParams*> models;
  for (const auto& run : result.runs) {
    const fs::path vdir = prepare_dir((dir / harness::variant_name(run.variant)).string());
    network::save_checkpoint(run.training.checkpoint, vdir / "checkpoint.bin");
    write_history(vdir / "history.csv", run.training.history, false);
    models[run.variant] = &run.training.checkpoint.params;
  }
  const std::string md = report::render_markdown(result.report);
  report::write_text(dir / "report.md", md);
  report::write_text(dir / "report.csv", report::render_csv(result.report));
  report::write_text(dir / "config.json", config::canonical_json(cfg) + "\n");

  constexpr std::size_t kGridSamples = 4;
  const auto& test = result.split.test.samples();
  const std::vector<image::PairedSample> shown(test.begin(), test.begin() + std::min(kGridSamples, test.size()));
  image::save_image(report::ablation_grid(models, shown), dir / "grid.png");

  const auto& b = result.report.baseline;
  fmt::print(out, "{}\nSmoky-input baseline (test split): SSIM {} PSNR {} MSE {} CIEDE-2000 {}\n", md,
             report::format_metric(b.ssim), report::format_metric(b.psnr_db), report::format_metric(b.mse),
             report::format_metric(b.ciede2000));
  return 0;
}

std::vector<std::string> png_names(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(fmt::format("{} is not a directory", dir.string()));
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

int cmd_metrics(const std::string& dir_a, const std::string& dir_b, const std::string& out_dir, std::ostream& out) {
  const auto names = png_names(dir_a);
  if (names != png_names(dir_b)) {
    throw PairingError(fmt::format("{} and {} do not hold the same PNG file names", dir_a, dir_b));
  }
  if (names.empty()) throw DatasetError(fmt::format("no PNG files in {}", dir_a));
  std::vector<metrics::MetricRecord> records;
  for (const auto& name : names) {
    const auto a = image::load_image(fs::path(dir_a) / name);
    const auto b = image::load_image(fs::path(dir_b) / name);
    if (a.shape() != b.shape()) {
      throw PairingError(fmt::format("{}: shapes differ ({} vs {})", name, a.shape().str(), b.shape().str()));
    }
    records.push_back(metrics::evaluate_pair(a, b, fs::path(name).stem().string()));
  }
  std::ostringstream csv;
  metrics::write_metrics_csv(csv, records);
  if (!out_dir.empty()) report::write_text(prepare_dir(out_dir) / "metrics.csv", csv.str());
  out << csv.str();
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::ostream& out) {
  bool ok = true;
  for (const auto& r : gradcheck::run_all(seed)) {
    const bool pass = r.max_relative_error < gradcheck::kTolerance;
    ok = ok && pass;
    fmt::print(out, "{:<16} max_rel_err {:.3e} over {} coords {}\n", r.name, r.max_relative_error, r.checked,
               pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

int cmd_synth(const CommonOptions& o, std::ostream& out) {
  auto cfg = resolve_config(o);
  if (o.seed) cfg.dataset.synthetic.seed = *o.seed;
  if (o.out.empty()) throw ConfigurationError("synth requires --out");
  const auto ds = image::make_synthetic_dataset(cfg.dataset.synthetic);
  const auto manifest = image::write_paired_dataset(ds, o.out);
  fmt::print(out, "wrote {} pairs; manifest {}\n", ds.size(), manifest.string());
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Laparoscopic desmoking: U-Net with a learnable Wiener filter", "ulw"};
  app.require_subcommand(1);

  CommonOptions train_o, eval_o, ablate_o, synth_o;
  std::string resume, checkpoint, which = "test", dir_a, dir_b, metrics_out;
  std::uint64_t checkpoint_every = 0, gradcheck_seed = 0;

  auto* train = app.add_subcommand("train", "Train one model");
  add_common(train, train_o);
  train->add_option("--resume", resume, "Continue from a checkpoint with the same config hash")
      ->check(CLI::ExistingFile);
  train->add_option("--checkpoint-every", checkpoint_every, "Also save the checkpoint every N steps");

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on a data split");
  add_common(evaluate, eval_o);
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--split", which, "train, val, test or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the four ablation variants");
  add_common(ablate, ablate_o);

  auto* metrics_cmd = app.add_subcommand("metrics", "Pairwise metrics CSV over two PNG directories");
  metrics_cmd->add_option("dir_a", dir_a, "Predictions")->required();
  metrics_cmd->add_option("dir_b", dir_b, "References")->required();
  metrics_cmd->add_option("--out", metrics_out, "Also write metrics.csv here");

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck_cmd->add_option("--seed", gradcheck_seed, "Seed for the random inputs");

  auto* synth = app.add_subcommand("synth", "Write a synthetic smoky/clean dataset");
  add_common(synth, synth_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (*train) return cmd_train(train_o, resume, checkpoint_every, out, err);
    if (*evaluate) return cmd_evaluate(eval_o, checkpoint, which, out);
    if (*ablate) return cmd_ablate(ablate_o, out, err);
    if (*metrics_cmd) return cmd_metrics(dir_a, dir_b, metrics_out, out);
    if (*gradcheck_cmd) return cmd_gradcheck(gradcheck_seed, out);
    if (*synth) return cmd_synth(synth_o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace ulw::cli
