#include "ulw/config.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "ulw/digest.hpp"
#include "ulw/errors.hpp"

namespace ulw::config {
namespace {

using nlohmann::json;

// Reads fields from one JSON object, remembering which keys were consumed so
// leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigurationError(fmt::format("{}: expected an object", label()));
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigurationError(fmt::format("{}.{}: wrong type ({})", label(), key, it->type_name()));
    }
  }

  void read_unsigned(const char* key, std::uint64_t& out) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    if (!it->is_number_unsigned()) {
      throw ConfigurationError(fmt::format("{}.{}: expected a non-negative integer", label(), key));
    }
    out = it->get<std::uint64_t>();
  }

  void read_int(const char* key, int& out) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    if (!it->is_number_integer()) throw ConfigurationError(fmt::format("{}.{}: expected an integer", label(), key));
    out = it->get<int>();
  }

  void read_size(const char* key, std::size_t& out) {
    std::uint64_t v = out;
    read_unsigned(key, v);
    out = static_cast<std::size_t>(v);
  }

  const json* child(const char* key) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string child_path(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.contains(key)) throw ConfigurationError(fmt::format("{}: unknown key \"{}\"", label(), key));
    }
  }

 private:
  std::string label() const { return path_.empty() ? "config" : path_; }

  const json& obj_;
  std::string path_;
  std::set<std::string, std::less<>> seen_;
};

template <typename Fn>
void with_child(ObjectReader& parent, const char* key, Fn&& fn) {
  if (const json* c = parent.child(key)) {
    ObjectReader r(*c, parent.child_path(key));
    fn(r);
    r.finish();
  }
}

void read_dataset(ObjectReader& r, DatasetConfig& d) {
  std::string source{dataset_source_name(d.source)};
  r.read("source", source);
  if (source == "synthetic") {
    d.source = DatasetSource::synthetic;
  } else if (source == "manifest") {
    d.source = DatasetSource::manifest;
  } else {
    throw ConfigurationError(fmt::format("dataset.source must be \"synthetic\" or \"manifest\", got \"{}\"", source));
  }
  r.read("manifest", d.manifest);
  r.read_size("pairs", d.synthetic.pairs);
  r.read_size("height", d.synthetic.height);
  r.read_size("width", d.synthetic.width);
  r.read_unsigned("seed", d.synthetic.seed);
  with_child(r, "smoke", [&](ObjectReader& s) {
    std::vector<double> atm(d.synthetic.smoke.atmosphere.begin(), d.synthetic.smoke.atmosphere.end());
    s.read("atmosphere", atm);
    if (atm.size() != 3) throw ConfigurationError("dataset.smoke.atmosphere must have 3 entries");
    std::copy(atm.begin(), atm.end(), d.synthetic.smoke.atmosphere.begin());
    s.read("t_min", d.synthetic.smoke.t_min);
    s.read("t_max", d.synthetic.smoke.t_max);
    s.read_int("noise_scale", d.synthetic.smoke.noise_scale);
  });
  with_child(r, "split", [&](ObjectReader& s) {
    s.read("train", d.split.train);
    s.read("val", d.split.val);
    s.read("test", d.split.test);
  });
}

void read_model(ObjectReader& r, network::ModelConfig& m) {
  r.read_int("depth", m.unet.depth);
  r.read_int("base_channels", m.unet.base_channels);
  std::string act{ops::activation_name(m.unet.activation)};
  r.read("activation", act);
  try {
    m.unet.activation = ops::parse_activation(act);
  } catch (const Error& e) {
    throw ConfigurationError(fmt::format("model.activation: {}", e.what()));
  }
  r.read("with_wiener", m.with_wiener);
  with_child(r, "wiener", [&](ObjectReader& w) {
    w.read_int("kernel_size", m.wiener.kernel_size);
    w.read("gaussian_std", m.wiener.gaussian_std);
    w.read("sigma2_init", m.wiener.sigma2_init);
    w.read("epsilon", m.wiener.epsilon);
  });
}

void read_loss(ObjectReader& r, LossSettings& l) {
  with_child(r, "weights", [&](ObjectReader& w) {
    w.read("mse", l.weights.mse);
    w.read("ssim", l.weights.ssim);
    w.read("perceptual", l.weights.perceptual);
  });
  with_child(r, "extractor", [&](ObjectReader& e) {
    std::string mode{losses::extractor_mode_name(l.extractor.mode)};
    e.read("mode", mode);
    try {
      l.extractor.mode = losses::parse_extractor_mode(mode);
    } catch (const Error& ex) {
      throw ConfigurationError(fmt::format("loss.extractor.mode: {}", ex.what()));
    }
    e.read("layer", l.extractor.layer);
    e.read_unsigned("seed", l.extractor.seed);
    e.read("weights", l.extractor.weights);
  });
  with_child(r, "ssim", [&](ObjectReader& s) {
    s.read_int("window_size", l.ssim.window_size);
    s.read("window_sigma", l.ssim.window_sigma);
    s.read("k1", l.ssim.k1);
    s.read("k2", l.ssim.k2);
    s.read("dynamic_range", l.ssim.dynamic_range);
  });
}

void read_optimizer(ObjectReader& r, OptimizerConfig& o) {
  r.read("learning_rate", o.learning_rate);
  r.read_unsigned("steps", o.steps);
  r.read_size("batch_size", o.batch_size);
  r.read("beta1", o.beta1);
  r.read("beta2", o.beta2);
  r.read("epsilon", o.epsilon);
}

json to_json(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  const auto& s = d.synthetic.smoke;
  const auto& m = c.model;
  const auto& l = c.loss;
  const auto& o = c.optimizer;
  return json{
      {"dataset",
       {{"source", dataset_source_name(d.source)},
        {"manifest", d.manifest},
        {"pairs", d.synthetic.pairs},
        {"height", d.synthetic.height},
        {"width", d.synthetic.width},
        {"seed", d.synthetic.seed},
        {"smoke",
         {{"atmosphere", s.atmosphere}, {"t_min", s.t_min}, {"t_max", s.t_max}, {"noise_scale", s.noise_scale}}},
        {"split", {{"train", d.split.train}, {"val", d.split.val}, {"test", d.split.test}}}}},
      {"model",
       {{"depth", m.unet.depth},
        {"base_channels", m.unet.base_channels},
        {"activation", ops::activation_name(m.unet.activation)},
        {"with_wiener", m.with_wiener},
        {"wiener",
         {{"kernel_size", m.wiener.kernel_size},
          {"gaussian_std", m.wiener.gaussian_std},
          {"sigma2_init", m.wiener.sigma2_init},
          {"epsilon", m.wiener.epsilon}}}}},
      {"loss",
       {{"weights", {{"mse", l.weights.mse}, {"ssim", l.weights.ssim}, {"perceptual", l.weights.perceptual}}},
        {"extractor",
         {{"mode", losses::extractor_mode_name(l.extractor.mode)},
          {"layer", l.extractor.layer},
          {"seed", l.extractor.seed},
          {"weights", l.extractor.weights}}},
        {"ssim",
         {{"window_size", l.ssim.window_size},
          {"window_sigma", l.ssim.window_sigma},
          {"k1", l.ssim.k1},
          {"k2", l.ssim.k2},
          {"dynamic_range", l.ssim.dynamic_range}}}}},
      {"optimizer",
       {{"learning_rate", o.learning_rate},
        {"steps", o.steps},
        {"batch_size", o.batch_size},
        {"beta1", o.beta1},
        {"beta2", o.beta2},
        {"epsilon", o.epsilon}}},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
  };
}

bool finite_positive(double v) { return std::isfinite(v) && v > 0.0; }

}  // namespace

std::string_view dataset_source_name(DatasetSource s) {
  return s == DatasetSource::synthetic ? "synthetic" : "manifest";
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigurationError(msg); };
  // Lower-level validators throw ParameterError; surface them uniformly.
  try {
    dataset.synthetic.smoke.validate();
    loss.ssim.validate();
  } catch (const ParameterError& e) {
    fail(e.what());
  }
  model.unet.validate();
  if (dataset.source == DatasetSource::manifest && dataset.manifest.empty()) {
    fail("dataset.manifest is required when dataset.source is \"manifest\"");
  }
  if (dataset.source == DatasetSource::synthetic) {
    const auto& s = dataset.synthetic;
    if (s.pairs < 3) fail(fmt::format("dataset.pairs must be at least 3, got {}", s.pairs));
    if (s.height < 16 || s.width < 16) fail("dataset.height and dataset.width must be at least 16");
    const std::size_t mult = model.unet.required_multiple();
    if (s.height % mult != 0 || s.width % mult != 0) {
      fail(fmt::format("dataset images {}x{} must be divisible by {} for depth {}", s.height, s.width, mult,
                       model.unet.depth));
    }
  }
  const auto& w = model.wiener;
  if (w.kernel_size < 3 || w.kernel_size % 2 == 0) {
    fail(fmt::format("model.wiener.kernel_size must be odd and >= 3, got {}", w.kernel_size));
  }
  if (!finite_positive(w.gaussian_std)) fail("model.wiener.gaussian_std must be positive");
  if (!finite_positive(w.sigma2_init)) fail("model.wiener.sigma2_init must be positive");
  if (!finite_positive(w.epsilon)) fail("model.wiener.epsilon must be positive");
  for (double v : {loss.weights.mse, loss.weights.ssim, loss.weights.perceptual}) {
    if (!std::isfinite(v) || v < 0.0) fail("loss weights must be finite and non-negative");
  }
  if (loss.weights.mse == 0.0 && loss.weights.ssim == 0.0 && loss.weights.perceptual == 0.0) {
    fail("at least one loss weight must be positive");
  }
  if (!finite_positive(optimizer.learning_rate)) fail("optimizer.learning_rate must be positive");
  if (optimizer.batch_size == 0) fail("optimizer.batch_size must be positive");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
    fail("optimizer betas must lie in [0, 1)");
  }
  if (!finite_positive(optimizer.epsilon)) fail("optimizer.epsilon must be positive");
}

ExperimentConfig parse_config(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigurationError(fmt::format("config is not valid JSON: {}", e.what()));
  }
  ExperimentConfig cfg;
  ObjectReader root(doc, "");
  with_child(root, "dataset", [&](ObjectReader& r) { read_dataset(r, cfg.dataset); });
  with_child(root, "model", [&](ObjectReader& r) { read_model(r, cfg.model); });
  with_child(root, "loss", [&](ObjectReader& r) { read_loss(r, cfg.loss); });
  with_child(root, "optimizer", [&](ObjectReader& r) { read_optimizer(r, cfg.optimizer); });
  root.read_unsigned("seed", cfg.seed);
  root.read("output_dir", cfg.output_dir);
  root.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open config {}", path.string()));
  std::ostringstream text;
  text << in.rdbuf();
  ExperimentConfig cfg = parse_config(text.str());
  const std::filesystem::path base = path.parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(cfg.dataset.manifest);
  resolve(cfg.loss.extractor.weights);
  return cfg;
}

std::string canonical_json(const ExperimentConfig& cfg) { return to_json(cfg).dump(); }

std::string config_hash(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  c.output_dir.clear();
  return sha256_hex(canonical_json(c));
}

losses::LossConfig make_loss_config(const LossSettings& settings) {
  losses::LossConfig lc;
  lc.weights = settings.weights;
  lc.ssim = settings.ssim;
  if (settings.weights.perceptual > 0.0) {
    const auto& e = settings.extractor;
    const std::string tag = e.layer.empty() ? losses::default_layer_tag(e.mode) : e.layer;
    lc.extractor =
        std::make_shared<const losses::FeatureExtractor>(losses::make_extractor(e.mode, tag, e.seed, e.weights));
  }
  return lc;
}

}  // namespace ulw::config
