#include "mrl/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "mrl/checkpoint.hpp"
#include "mrl/evalkit.hpp"
#include "mrl/rng.hpp"
#include "mrl/training.hpp"

namespace mrl {

namespace {

namespace fs = std::filesystem;

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Per-step lines go to stdout verbatim and to the log file with a timestamp
// prefix, so run artifacts stay byte-stable except for the log.
class StepLogger {
 public:
  StepLogger(const std::string& dir, const std::string& stage) {
    fs::create_directories(dir);
    path_ = (fs::path(dir) / (stage + ".log")).string();
    file_.open(path_, std::ios::trunc);
    if (!file_) fail(ErrorKind::Io, "cannot write " + path_);
  }

  void note(const std::string& message) {
    std::cout << message << "\n";
    file_ << utc_now() << " " << message << "\n";
  }

  void step_line(long step, double lr, double loss) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "step=%ld lr=%.8g loss=%.8g", step, lr, loss);
    std::cout << buf << "\n";
    file_ << utc_now() << " " << buf << "\n";
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream file_;
};

void require_dataset(const RunConfig& cfg, const char* cmd) {
  if (cfg.data.dataset.empty())
    fail(ErrorKind::Config, std::string("data.dataset is required for ") + cmd);
}

void load_weights(Model<float>& model, const RunConfig& cfg, const std::string& checkpoint_path) {
  auto ckpt = load_checkpoint(checkpoint_path);
  // a checkpoint written by this tool carries the full config; reject silent
  // architecture drift that identical tensor shapes would not catch
  if (ckpt.metadata.contains("config") && ckpt.metadata["config"].is_object() &&
      ckpt.metadata["config"].contains("model")) {
    const auto ours = cfg.to_json()["model"];
    const auto& theirs = ckpt.metadata["config"]["model"];
    if (theirs != ours)
      fail(ErrorKind::Config, checkpoint_path + " was trained with a different model config: " +
                                  theirs.dump() + " vs " + ours.dump());
  }
  restore(model, nullptr, ckpt);
}

int cmd_synth(const RunConfig& cfg) {
  const auto dir = fs::path(cfg.out);
  fs::create_directories(dir);
  const auto spec = make_default_skeleton(cfg.model.joints);
  const auto seqs =
      synth_generate(spec, cfg.data.classes, cfg.data.per_class, cfg.data.frames, cfg.data.fps,
                     cfg.seed);
  std::vector<IndexEntry> entries;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "seq_c%d_%03zu.mseq", seqs[i].class_label, i);
    write_sequence((dir / name).string(), seqs[i]);
    entries.push_back({name, seqs[i].class_label});
  }
  write_index((dir / "index.json").string(), entries);
  std::cout << "synth: wrote " << seqs.size() << " sequences (" << cfg.data.classes
            << " classes x " << cfg.data.per_class << ", " << cfg.data.frames << " frames at "
            << cfg.data.fps << " fps) to " << dir.string() << "\n";
  return 0;
}

int cmd_pretrain(const RunConfig& cfg) {
  require_dataset(cfg, "pretrain");
  auto windows = build_windows(cfg);
  if (windows.train.empty()) fail(ErrorKind::InvalidArgument, "no training windows in the dataset");
  Model<float> model(cfg.model, cfg.seed);
  Trainer trainer(model, windows.train, cfg.pretrain_config());
  StepLogger log(cfg.out, "pretrain");
  if (cfg.pretrain.mode == PretrainMode::None) {
    log.note("pretraining disabled (pretrain.mode=none); saving the initial weights");
  } else {
    for (long s = 0; s < cfg.pretrain.steps; ++s) {
      const double loss = trainer.pretrain_step();
      log.step_line(s, trainer.last_lr(), loss);
    }
  }
  const auto ckpt_path = (fs::path(cfg.out) / "pretrain.mckp").string();
  save_checkpoint(ckpt_path,
                  snapshot(model, &trainer.optimizer(), trainer.step(), cfg.to_json(), cfg.seed));
  std::cout << "pretrain: saved " << ckpt_path << " (" << model.param_count() << " params, "
            << windows.train.size() << " windows)\n";
  return 0;
}

int cmd_finetune(const RunConfig& cfg, const std::string& checkpoint_path) {
  require_dataset(cfg, "finetune");
  auto windows = build_windows(cfg);
  if (windows.train.empty()) fail(ErrorKind::InvalidArgument, "no training windows in the dataset");
  Model<float> model(cfg.model, cfg.seed);
  if (!checkpoint_path.empty()) load_weights(model, cfg, checkpoint_path);
  Trainer trainer(model, windows.train, cfg.finetune_config());
  StepLogger log(cfg.out, "finetune");
  if (!checkpoint_path.empty()) log.note("finetune: starting from " + checkpoint_path);
  for (long s = 0; s < cfg.finetune.steps; ++s) {
    const double loss = trainer.finetune_step();
    log.step_line(s, trainer.last_lr(), loss);
  }
  const auto ckpt_path = (fs::path(cfg.out) / "finetune.mckp").string();
  save_checkpoint(ckpt_path,
                  snapshot(model, &trainer.optimizer(), trainer.step(), cfg.to_json(), cfg.seed));
  std::cout << "finetune: saved " << ckpt_path << " (" << windows.train.size() << " windows)\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path) {
  require_dataset(cfg, "eval");
  auto windows = build_windows(cfg);
  if (windows.test.empty())
    fail(ErrorKind::InvalidArgument,
         "no held-out windows; raise data.holdout_fraction or enlarge the dataset");
  Model<float> model(cfg.model, cfg.seed);
  load_weights(model, cfg, checkpoint_path);
  auto report = evaluate(model, windows.test, cfg.eval.horizons_ms, int(cfg.data.fps),
                         cfg.eval.batch);
  report.config_hash = config_hash(cfg.to_json());
  emit_report(report, cfg.out);
  for (const auto& r : report.rows) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "horizon_ms=%d frame=%zu mpjpe_model=%.6g mpjpe_zero_vel=%.6g "
                  "mpjpe_const_vel=%.6g",
                  r.horizon_ms, r.frame, r.mpjpe_model, r.mpjpe_zero_velocity,
                  r.mpjpe_const_velocity);
    std::cout << buf << "\n";
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf), "average mpjpe_model=%.6g mpjpe_zero_vel=%.6g mpjpe_const_vel=%.6g",
                report.average_model, report.average_zero_velocity,
                report.average_const_velocity);
  std::cout << buf << "\n";
  std::cout << "eval: " << windows.test.size() << " windows -> " << cfg.out << "/report.csv, "
            << cfg.out << "/report.json\n";
  return 0;
}

int cmd_probe(const RunConfig& cfg, const std::string& checkpoint_path) {
  require_dataset(cfg, "probe");
  auto windows = build_windows(cfg);
  std::vector<SampleWindow> all = windows.train;
  all.insert(all.end(), windows.test.begin(), windows.test.end());
  if (all.empty()) fail(ErrorKind::InvalidArgument, "no windows in the dataset");
  Model<float> model(cfg.model, cfg.seed);
  load_weights(model, cfg, checkpoint_path);
  const auto feats = extract_features(model, all, cfg.eval.batch);
  std::vector<int> labels;
  for (const auto& w : all) labels.push_back(w.label);
  const double acc = linear_probe(feats, labels, cfg.eval.probe_split, cfg.seed);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "probe_accuracy=%.6g", acc);
  std::cout << buf << "\n";
  fs::create_directories(cfg.out);
  const auto path = (fs::path(cfg.out) / "probe.json").string();
  std::ofstream js(path, std::ios::trunc);
  if (!js) fail(ErrorKind::Io, "cannot write " + path);
  js << nlohmann::json{{"probe_accuracy", acc},
                       {"samples", all.size()},
                       {"split", cfg.eval.probe_split},
                       {"config_hash", config_hash(cfg.to_json())}}
            .dump(2)
     << "\n";
  return 0;
}

int cmd_mask_dump(const RunConfig& cfg) {
  require_dataset(cfg, "mask-dump");
  auto windows = build_windows(cfg);
  if (windows.train.empty()) fail(ErrorKind::InvalidArgument, "no windows to mask");
  const auto& w = windows.train.front();
  const auto vel = joint_velocity(w.past, w.past_frames, w.joints, w.coord_count);
  const auto plan = build_mask(vel, w.past_frames, w.joints, cfg.mask.rate, cfg.mask.strategy,
                               cfg.seed, cfg.mask.invert);
  fs::create_directories(cfg.out);
  const auto path = (fs::path(cfg.out) / "mask.csv").string();
  std::ofstream csv(path, std::ios::trunc);
  if (!csv) fail(ErrorKind::Io, "cannot write " + path);
  csv << "frame,joint,velocity,masked\n";
  for (std::size_t f = 1; f <= w.past_frames; ++f)
    for (std::size_t j = 0; j < w.joints; ++j) {
      const double v = f == 1 ? 0.0 : vel[(f - 2) * w.joints + j];
      char line[96];
      std::snprintf(line, sizeof(line), "%zu,%zu,%.9g,%d\n", f, j, v,
                    plan.is_masked(f - 1, j) ? 1 : 0);
      csv << line;
    }
  csv.flush();
  if (!csv) fail(ErrorKind::Io, "write failed for " + path);
  std::cout << "mask-dump: masked=" << plan.masked_count() << " of " << w.past_frames * w.joints
            << " positions (rate=" << cfg.mask.rate << ") -> " << path << "\n";
  return 0;
}

}  // namespace

DatasetWindows build_windows(const RunConfig& cfg) {
  const auto seqs = load_dataset(cfg.data.dataset);
  if (seqs.empty()) fail(ErrorKind::InvalidArgument, cfg.data.dataset + " lists no sequences");
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto& s = seqs[i];
    if (s.joints != cfg.model.joints || s.coord_count != cfg.model.coords)
      fail(ErrorKind::ShapeMismatch,
           "sequence " + std::to_string(i) + " has " + std::to_string(s.joints) + " joints x " +
               std::to_string(s.coord_count) + " coords, config expects " +
               std::to_string(cfg.model.joints) + " x " + std::to_string(cfg.model.coords));
    if (s.fps != cfg.data.fps)
      fail(ErrorKind::InvalidArgument, "sequence " + std::to_string(i) + " is " +
                                           std::to_string(s.fps) + " fps, config expects " +
                                           std::to_string(cfg.data.fps));
  }

  // hold out whole sequences, per class, so test windows never overlap train
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < seqs.size(); ++i) by_class[seqs[i].class_label].push_back(i);
  std::vector<char> in_test(seqs.size(), 0);
  Rng rng(derive_seed(cfg.seed, 0xDA7A5E7ull));
  for (auto& [label, ids] : by_class) {
    for (std::size_t i = ids.size() - 1; i > 0; --i)
      std::swap(ids[i], ids[rng.below(i + 1)]);
    const auto n_test = static_cast<std::size_t>(
        std::llround(cfg.data.holdout_fraction * double(ids.size())));
    for (std::size_t i = 0; i < n_test; ++i) in_test[ids[i]] = 1;
  }

  const std::size_t eval_stride =
      cfg.data.eval_stride ? cfg.data.eval_stride : cfg.model.future_frames;
  DatasetWindows out;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const std::size_t stride = in_test[i] ? eval_stride : cfg.data.train_stride;
    auto ws = window_split(seqs[i], cfg.model.past_frames, cfg.model.future_frames, stride, i);
    auto& dst = in_test[i] ? out.test : out.train;
    for (auto& w : ws) {
      if (cfg.data.center_on_root) center_window_on_root(w);
      dst.push_back(std::move(w));
    }
  }
  return out;
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"masked-pretraining toolkit for 3D skeleton motion prediction"};
  app.require_subcommand(1);

  std::string config_path, out_override, checkpoint_path;
  std::uint64_t seed_override = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file (defaults apply when omitted)");
    sub->add_option("--seed", seed_override, "seed override");
    sub->add_option("--out", out_override, "output directory override");
  };

  auto* synth = app.add_subcommand("synth", "generate a labeled synthetic dataset");
  auto* pretrain = app.add_subcommand("pretrain", "masked/denoise pretraining stage");
  auto* finetune = app.add_subcommand("finetune", "supervised prediction stage");
  auto* eval = app.add_subcommand("eval", "MPJPE report on the held-out split");
  auto* probe = app.add_subcommand("probe", "linear probe over pooled features");
  auto* mask_dump = app.add_subcommand("mask-dump", "dump the mask plan of the first window");
  for (auto* sub : {synth, pretrain, finetune, eval, probe, mask_dump}) add_common(sub);
  finetune->add_option("--checkpoint", checkpoint_path, "pretraining checkpoint to start from");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint to evaluate")->required();
  probe->add_option("--checkpoint", checkpoint_path, "checkpoint to probe")->required();

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("mrl");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : parse_config_file(config_path);
    CLI::App* sub = app.get_subcommands().front();
    if (sub->count("--seed")) cfg.seed = seed_override;
    if (sub->count("--out")) cfg.out = out_override;

    if (sub == synth) return cmd_synth(cfg);
    if (sub == pretrain) return cmd_pretrain(cfg);
    if (sub == finetune) return cmd_finetune(cfg, checkpoint_path);
    if (sub == eval) return cmd_eval(cfg, checkpoint_path);
    if (sub == probe) return cmd_probe(cfg, checkpoint_path);
    if (sub == mask_dump) return cmd_mask_dump(cfg);
    fail(ErrorKind::InvalidArgument, "unknown subcommand");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace mrl
