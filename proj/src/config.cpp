#include "mrl/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "mrl/errors.hpp"

namespace mrl {

namespace {

[[noreturn]] void bad(const std::string& message) { fail(ErrorKind::Config, "config: " + message); }

// Reads keys out of one JSON object, tracking which were consumed so leftover
// (unknown) keys can be reported.
class Section {
 public:
  Section(const nlohmann::json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
    if (!obj.is_object()) bad(label("") + "must be an object");
  }

  bool has(const std::string& key) {
    if (!obj_.contains(key)) return false;
    seen_.insert(key);
    return true;
  }

  const nlohmann::json& raw(const std::string& key) { return obj_.at(key); }

  void get_uint(const std::string& key, std::size_t& out, std::size_t min_value) {
    if (!has(key)) return;
    const auto& v = raw(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                   v.get<long long>() < 0))
      bad(label(key) + "must be a non-negative integer");
    const auto u = v.get<unsigned long long>();
    if (u < min_value) bad(label(key) + "must be >= " + std::to_string(min_value));
    out = static_cast<std::size_t>(u);
  }

  void get_u64(const std::string& key, std::uint64_t& out) {
    if (!has(key)) return;
    const auto& v = raw(key);
    // literal ints land as signed; accept any integer value >= 0
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0))
      bad(label(key) + "must be a non-negative integer");
    out = v.get<std::uint64_t>();
  }

  void get_long(const std::string& key, long& out, long min_value) {
    if (!has(key)) return;
    const auto& v = raw(key);
    if (!v.is_number_integer()) bad(label(key) + "must be an integer");
    const auto n = v.get<long long>();
    if (n < min_value) bad(label(key) + "must be >= " + std::to_string(min_value));
    out = static_cast<long>(n);
  }

  void get_double(const std::string& key, double& out) {
    if (!has(key)) return;
    const auto& v = raw(key);
    if (!v.is_number()) bad(label(key) + "must be a number");
    out = v.get<double>();
  }

  void get_bool(const std::string& key, bool& out) {
    if (!has(key)) return;
    const auto& v = raw(key);
    if (!v.is_boolean()) bad(label(key) + "must be true or false");
    out = v.get<bool>();
  }

  void get_string(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const auto& v = raw(key);
    if (!v.is_string()) bad(label(key) + "must be a string");
    out = v.get<std::string>();
  }

  // value must be one of the listed names; returns its index
  std::size_t get_choice(const std::string& key, const std::vector<const char*>& names,
                         std::size_t current) {
    if (!has(key)) return current;
    const auto& v = raw(key);
    if (!v.is_string()) bad(label(key) + "must be a string");
    const auto s = v.get<std::string>();
    for (std::size_t i = 0; i < names.size(); ++i)
      if (s == names[i]) return i;
    std::string allowed;
    for (std::size_t i = 0; i < names.size(); ++i)
      allowed += std::string(i ? "|" : "") + names[i];
    bad(label(key) + "must be one of " + allowed + " (got \"" + s + "\")");
  }

  void finish() {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) bad("unknown key " + label(it.key()).substr(0, label(it.key()).size() - 1));
  }

 private:
  std::string label(const std::string& key) const {
    if (key.empty()) return prefix_.empty() ? std::string("document ") : prefix_ + " ";
    return (prefix_.empty() ? key : prefix_ + "." + key) + " ";
  }

  const nlohmann::json& obj_;
  std::string prefix_;
  std::set<std::string> seen_;
};

const nlohmann::json kEmpty = nlohmann::json::object();

}  // namespace

RunConfig parse_config(const nlohmann::json& doc) {
  RunConfig cfg;
  Section root(doc, "");

  root.get_u64("seed", cfg.seed);
  root.get_string("out", cfg.out);
  if (cfg.out.empty()) bad("out must not be empty");

  {
    Section s(root.has("model") ? root.raw("model") : kEmpty, "model");
    s.get_uint("channels", cfg.model.channels, 1);
    s.get_uint("heads", cfg.model.heads, 1);
    s.get_uint("head_dim", cfg.model.head_dim, 1);
    s.get_uint("pme_layers", cfg.model.pme_layers, 1);
    s.get_uint("fmp_layers", cfg.model.fmp_layers, 1);
    s.get_uint("past_frames", cfg.model.past_frames, 2);
    s.get_uint("future_frames", cfg.model.future_frames, 1);
    s.get_uint("joints", cfg.model.joints, 1);
    s.get_uint("coords", cfg.model.coords, 1);
    cfg.model.fusion = static_cast<Fusion>(
        s.get_choice("fusion", {"cross", "add", "concat"}, static_cast<std::size_t>(cfg.model.fusion)));
    cfg.model.layout = static_cast<Layout>(s.get_choice(
        "attention", {"sequential", "parallel"}, static_cast<std::size_t>(cfg.model.layout)));
    s.finish();
  }
  {
    Section s(root.has("data") ? root.raw("data") : kEmpty, "data");
    s.get_string("dataset", cfg.data.dataset);
    std::size_t fps = cfg.data.fps;
    s.get_uint("fps", fps, 1);
    cfg.data.fps = static_cast<std::uint32_t>(fps);
    s.get_bool("center_on_root", cfg.data.center_on_root);
    s.get_uint("train_stride", cfg.data.train_stride, 1);
    s.get_uint("eval_stride", cfg.data.eval_stride, 0);
    s.get_double("holdout_fraction", cfg.data.holdout_fraction);
    if (!(cfg.data.holdout_fraction >= 0.0 && cfg.data.holdout_fraction < 1.0))
      bad("data.holdout_fraction ∈ [0,1) (got " + std::to_string(cfg.data.holdout_fraction) + ")");
    s.get_uint("classes", cfg.data.classes, 1);
    s.get_uint("per_class", cfg.data.per_class, 1);
    s.get_uint("frames", cfg.data.frames, 2);
    s.finish();
  }
  {
    Section s(root.has("mask") ? root.raw("mask") : kEmpty, "mask");
    s.get_double("rate", cfg.mask.rate);
    if (!(cfg.mask.rate >= 0.0 && cfg.mask.rate <= 1.0))
      bad("mask.rate ∈ [0,1] (got " + std::to_string(cfg.mask.rate) + ")");
    cfg.mask.strategy = static_cast<MaskStrategy>(s.get_choice(
        "strategy", {"velocity", "random"}, static_cast<std::size_t>(cfg.mask.strategy)));
    s.get_bool("invert", cfg.mask.invert);
    s.finish();
  }
  {
    Section s(root.has("pretrain") ? root.raw("pretrain") : kEmpty, "pretrain");
    s.get_long("steps", cfg.pretrain.steps, 0);
    cfg.pretrain.mode = static_cast<PretrainMode>(s.get_choice(
        "mode", {"mask", "denoise", "none"}, static_cast<std::size_t>(cfg.pretrain.mode)));
    s.get_double("noise_sigma", cfg.pretrain.noise_sigma);
    if (cfg.pretrain.noise_sigma < 0.0) bad("pretrain.noise_sigma must be >= 0");
    s.get_double("alpha", cfg.pretrain.alpha);
    if (cfg.pretrain.alpha < 0.0) bad("pretrain.alpha must be >= 0");
    s.finish();
  }
  {
    Section s(root.has("train") ? root.raw("train") : kEmpty, "train");
    s.get_double("lr", cfg.train.lr);
    if (!(cfg.train.lr > 0.0)) bad("train.lr must be > 0");
    s.get_uint("batch", cfg.train.batch, 1);
    s.get_double("grad_clip", cfg.train.grad_clip);
    if (cfg.train.grad_clip < 0.0) bad("train.grad_clip must be >= 0 (0 disables)");
    s.finish();
  }
  {
    Section s(root.has("finetune") ? root.raw("finetune") : kEmpty, "finetune");
    s.get_long("steps", cfg.finetune.steps, 0);
    s.get_bool("freeze_pme", cfg.finetune.freeze_pme);
    s.finish();
  }
  {
    Section s(root.has("eval") ? root.raw("eval") : kEmpty, "eval");
    if (s.has("horizons_ms")) {
      const auto& v = s.raw("horizons_ms");
      if (!v.is_array() || v.empty()) bad("eval.horizons_ms must be a non-empty array");
      cfg.eval.horizons_ms.clear();
      for (const auto& h : v) {
        if (!h.is_number_integer() || h.get<long long>() <= 0)
          bad("eval.horizons_ms entries must be positive integers");
        cfg.eval.horizons_ms.push_back(h.get<int>());
      }
      for (std::size_t i = 1; i < cfg.eval.horizons_ms.size(); ++i)
        if (cfg.eval.horizons_ms[i] <= cfg.eval.horizons_ms[i - 1])
          bad("eval.horizons_ms must be strictly increasing");
    }
    s.get_uint("batch", cfg.eval.batch, 1);
    s.get_double("probe_split", cfg.eval.probe_split);
    if (!(cfg.eval.probe_split > 0.0 && cfg.eval.probe_split < 1.0))
      bad("eval.probe_split ∈ (0,1) (got " + std::to_string(cfg.eval.probe_split) + ")");
    s.finish();
  }
  root.finish();
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open config " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const std::exception& ex) {
    fail(ErrorKind::Config, "config: " + path + " is not valid JSON: " + ex.what());
  }
  return parse_config(doc);
}

TrainConfig RunConfig::pretrain_config() const {
  TrainConfig tc;
  tc.batch = train.batch;
  tc.lr = train.lr;
  tc.steps = pretrain.steps;
  tc.alpha = pretrain.alpha;
  tc.mask_rate = mask.rate;
  tc.mode = pretrain.mode;
  tc.strategy = mask.strategy;
  tc.invert_mask = mask.invert;
  tc.noise_sigma = pretrain.noise_sigma;
  tc.grad_clip = train.grad_clip;
  tc.freeze_pme = false;
  tc.seed = seed;
  return tc;
}

TrainConfig RunConfig::finetune_config() const {
  TrainConfig tc = pretrain_config();
  tc.steps = finetune.steps;
  tc.freeze_pme = finetune.freeze_pme;
  return tc;
}

nlohmann::json RunConfig::to_json() const {
  const char* fusion_names[] = {"cross", "add", "concat"};
  const char* layout_names[] = {"sequential", "parallel"};
  const char* strategy_names[] = {"velocity", "random"};
  const char* mode_names[] = {"mask", "denoise", "none"};
  return nlohmann::json{
      {"seed", seed},
      {"out", out},
      {"model",
       {{"channels", model.channels},
        {"heads", model.heads},
        {"head_dim", model.head_dim},
        {"pme_layers", model.pme_layers},
        {"fmp_layers", model.fmp_layers},
        {"past_frames", model.past_frames},
        {"future_frames", model.future_frames},
        {"joints", model.joints},
        {"coords", model.coords},
        {"fusion", fusion_names[static_cast<int>(model.fusion)]},
        {"attention", layout_names[static_cast<int>(model.layout)]}}},
      {"data",
       {{"dataset", data.dataset},
        {"fps", data.fps},
        {"center_on_root", data.center_on_root},
        {"train_stride", data.train_stride},
        {"eval_stride", data.eval_stride},
        {"holdout_fraction", data.holdout_fraction},
        {"classes", data.classes},
        {"per_class", data.per_class},
        {"frames", data.frames}}},
      {"mask",
       {{"rate", mask.rate},
        {"strategy", strategy_names[static_cast<int>(mask.strategy)]},
        {"invert", mask.invert}}},
      {"pretrain",
       {{"steps", pretrain.steps},
        {"mode", mode_names[static_cast<int>(pretrain.mode)]},
        {"noise_sigma", pretrain.noise_sigma},
        {"alpha", pretrain.alpha}}},
      {"train", {{"lr", train.lr}, {"batch", train.batch}, {"grad_clip", train.grad_clip}}},
      {"finetune", {{"steps", finetune.steps}, {"freeze_pme", finetune.freeze_pme}}},
      {"eval",
       {{"horizons_ms", eval.horizons_ms},
        {"batch", eval.batch},
        {"probe_split", eval.probe_split}}},
  };
}

}  // namespace mrl
