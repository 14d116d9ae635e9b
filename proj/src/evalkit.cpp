#include "mrl/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "mrl/parallel.hpp"
#include "mrl/rng.hpp"

namespace mrl {

namespace {

// MPJPE at a 0-based frame of one sample laid out frame-major.
double mpjpe_raw(const float* pred, const float* gt, std::size_t joints, std::size_t coords,
                 std::size_t frame0) {
  double sum = 0.0;
  const float* p = pred + frame0 * joints * coords;
  const float* g = gt + frame0 * joints * coords;
  for (std::size_t j = 0; j < joints; ++j) {
    double sq = 0.0;
    for (std::size_t k = 0; k < coords; ++k) {
      const double d = double(p[j * coords + k]) - double(g[j * coords + k]);
      sq += d * d;
    }
    sum += std::sqrt(sq);
  }
  return sum / double(joints);
}

}  // namespace

double mpjpe(const std::vector<float>& pred, const std::vector<float>& gt, std::size_t frames,
             std::size_t joints, std::size_t coords, std::size_t frame) {
  if (frames == 0 || joints == 0 || coords == 0)
    fail(ErrorKind::InvalidArgument, "mpjpe: dims must be positive");
  const std::size_t n = frames * joints * coords;
  if (pred.size() != n || gt.size() != n)
    fail(ErrorKind::ShapeMismatch, "mpjpe: expected " + std::to_string(n) +
                                       " values, got pred=" + std::to_string(pred.size()) +
                                       " gt=" + std::to_string(gt.size()));
  if (frame < 1 || frame > frames)
    fail(ErrorKind::InvalidArgument, "mpjpe: frame " + std::to_string(frame) +
                                         " out of range [1, " + std::to_string(frames) + "]");
  return mpjpe_raw(pred.data(), gt.data(), joints, coords, frame - 1);
}

std::vector<float> baseline_predict(const std::vector<float>& past, std::size_t past_frames,
                                    std::size_t joints, std::size_t coords,
                                    std::size_t horizon_frames, Baseline kind) {
  const std::size_t pose = joints * coords;
  if (past_frames == 0 || pose == 0 || past.size() != past_frames * pose)
    fail(ErrorKind::ShapeMismatch, "baseline_predict: past size does not match dims");
  if (kind == Baseline::ConstVelocity && past_frames < 2)
    fail(ErrorKind::InvalidArgument,
         "baseline_predict: const_velocity needs at least 2 past frames, got " +
             std::to_string(past_frames));
  const float* last = past.data() + (past_frames - 1) * pose;
  std::vector<float> out(horizon_frames * pose);
  if (kind == Baseline::ZeroVelocity) {
    for (std::size_t l = 0; l < horizon_frames; ++l)
      std::copy(last, last + pose, out.data() + l * pose);
    return out;
  }
  const float* prev = past.data() + (past_frames - 2) * pose;
  for (std::size_t l = 0; l < horizon_frames; ++l)
    for (std::size_t i = 0; i < pose; ++i)
      out[l * pose + i] = last[i] + float(l + 1) * (last[i] - prev[i]);
  return out;
}

namespace {

void check_windows(const ModelConfig& mc, const std::vector<SampleWindow>& windows,
                   bool need_future) {
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    if (w.past.size() != mc.past_frames * mc.joints * mc.coords ||
        (need_future && w.future.size() != mc.future_frames * mc.joints * mc.coords))
      fail(ErrorKind::ShapeMismatch,
           "window " + std::to_string(i) + " does not match the model dims");
  }
}

}  // namespace

EvalReport evaluate(const Model<float>& model, const std::vector<SampleWindow>& windows,
                    const std::vector<int>& horizons_ms, int fps, std::size_t batch) {
  if (windows.empty()) fail(ErrorKind::InvalidArgument, "evaluate: empty window list");
  if (horizons_ms.empty()) fail(ErrorKind::InvalidArgument, "evaluate: no horizons requested");
  if (batch == 0) batch = 1;
  for (std::size_t i = 1; i < horizons_ms.size(); ++i)
    if (horizons_ms[i] <= horizons_ms[i - 1])
      fail(ErrorKind::InvalidArgument, "evaluate: horizons must be strictly increasing");

  const auto& mc = model.config();
  std::vector<std::size_t> frames;  // 1-based
  for (const int ms : horizons_ms) {
    const std::size_t f = ms_to_frame(ms, static_cast<std::uint32_t>(fps));
    if (f < 1 || f > mc.future_frames)
      fail(ErrorKind::InvalidArgument,
           "evaluate: horizon " + std::to_string(ms) + " ms maps to frame " + std::to_string(f) +
               ", outside the predicted range [1, " + std::to_string(mc.future_frames) + "]");
    frames.push_back(f);
  }
  check_windows(mc, windows, true);

  const std::size_t H = horizons_ms.size();
  const std::size_t chunks = (windows.size() + batch - 1) / batch;
  struct Partial {
    std::vector<double> model, zero, cvel;
  };
  std::vector<Partial> partials(chunks);

  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t lo = c * batch;
    const std::size_t hi = std::min(windows.size(), lo + batch);
    auto& part = partials[c];
    part.model.assign(H, 0.0);
    part.zero.assign(H, 0.0);
    part.cvel.assign(H, 0.0);

    std::vector<const std::vector<float>*> pasts;
    pasts.reserve(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) pasts.push_back(&windows[i].past);
    ad::NoGradGuard ng;
    const auto pred = model.predict_future(
        make_batch<float>(pasts, mc.past_frames, mc.joints, mc.coords));
    const std::size_t per_sample = mc.future_frames * mc.joints * mc.coords;
    const float* pv = pred.value().data();

    for (std::size_t i = lo; i < hi; ++i) {
      const auto& w = windows[i];
      const float* sample_pred = pv + (i - lo) * per_sample;
      const auto zero = baseline_predict(w.past, mc.past_frames, mc.joints, mc.coords,
                                         mc.future_frames, Baseline::ZeroVelocity);
      const auto cvel = baseline_predict(w.past, mc.past_frames, mc.joints, mc.coords,
                                         mc.future_frames, Baseline::ConstVelocity);
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t f0 = frames[h] - 1;
        part.model[h] += mpjpe_raw(sample_pred, w.future.data(), mc.joints, mc.coords, f0);
        part.zero[h] += mpjpe_raw(zero.data(), w.future.data(), mc.joints, mc.coords, f0);
        part.cvel[h] += mpjpe_raw(cvel.data(), w.future.data(), mc.joints, mc.coords, f0);
      }
    }
  });

  EvalReport report;
  report.sample_count = windows.size();
  const double inv_n = 1.0 / double(windows.size());
  for (std::size_t h = 0; h < H; ++h) {
    EvalReport::Row row;
    row.horizon_ms = horizons_ms[h];
    row.frame = frames[h];
    for (const auto& part : partials) {  // fixed order keeps the sum deterministic
      row.mpjpe_model += part.model[h];
      row.mpjpe_zero_velocity += part.zero[h];
      row.mpjpe_const_velocity += part.cvel[h];
    }
    row.mpjpe_model *= inv_n;
    row.mpjpe_zero_velocity *= inv_n;
    row.mpjpe_const_velocity *= inv_n;
    report.rows.push_back(row);
    report.average_model += row.mpjpe_model;
    report.average_zero_velocity += row.mpjpe_zero_velocity;
    report.average_const_velocity += row.mpjpe_const_velocity;
  }
  report.average_model /= double(H);
  report.average_zero_velocity /= double(H);
  report.average_const_velocity /= double(H);
  return report;
}

std::vector<std::vector<float>> extract_features(const Model<float>& model,
                                                 const std::vector<SampleWindow>& windows,
                                                 std::size_t batch) {
  if (windows.empty()) fail(ErrorKind::InvalidArgument, "extract_features: empty window list");
  if (batch == 0) batch = 1;
  const auto& mc = model.config();
  check_windows(mc, windows, false);
  std::vector<std::vector<float>> feats(windows.size());
  const std::size_t chunks = (windows.size() + batch - 1) / batch;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t lo = c * batch;
    const std::size_t hi = std::min(windows.size(), lo + batch);
    std::vector<const std::vector<float>*> pasts;
    for (std::size_t i = lo; i < hi; ++i) pasts.push_back(&windows[i].past);
    ad::NoGradGuard ng;
    const auto f = model.features(make_batch<float>(pasts, mc.past_frames, mc.joints, mc.coords));
    const std::size_t dim = f.shape()[1];
    for (std::size_t i = lo; i < hi; ++i) {
      const float* row = f.value().data() + (i - lo) * dim;
      feats[i].assign(row, row + dim);
    }
  });
  return feats;
}

double linear_probe(const std::vector<std::vector<float>>& features,
                    const std::vector<int>& labels, double split, std::uint64_t seed) {
  if (features.size() != labels.size())
    fail(ErrorKind::InvalidArgument, "linear_probe: " + std::to_string(features.size()) +
                                         " features vs " + std::to_string(labels.size()) +
                                         " labels");
  const std::size_t n = features.size();
  if (n < 2) fail(ErrorKind::InvalidArgument, "linear_probe: needs at least 2 samples");
  if (!(split > 0.0 && split < 1.0))
    fail(ErrorKind::InvalidArgument, "linear_probe: split must lie in (0, 1)");
  const std::size_t dim = features[0].size();
  for (const auto& f : features)
    if (f.size() != dim) fail(ErrorKind::ShapeMismatch, "linear_probe: ragged feature vectors");

  std::set<int> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2)
    fail(ErrorKind::SingleClass, "linear_probe: all samples share one label");
  std::vector<int> class_ids(distinct.begin(), distinct.end());
  auto class_of = [&](int label) {
    return std::size_t(std::lower_bound(class_ids.begin(), class_ids.end(), label) -
                       class_ids.begin());
  };
  const std::size_t C = class_ids.size();

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i)
    std::swap(order[i], order[rng.below(i + 1)]);
  std::size_t n_train = static_cast<std::size_t>(std::llround(split * double(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  // full-batch gradient descent on softmax cross-entropy
  std::vector<double> W(C * dim, 0.0), b(C, 0.0);
  std::vector<double> logits(C), prob(C);
  std::vector<double> gW(C * dim), gb(C);
  constexpr int kIters = 500;
  constexpr double kLr = 0.1;
  for (int it = 0; it < kIters; ++it) {
    std::fill(gW.begin(), gW.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t s = 0; s < n_train; ++s) {
      const std::size_t i = order[s];
      const auto& x = features[i];
      double mx = -1e300;
      for (std::size_t c = 0; c < C; ++c) {
        double z = b[c];
        for (std::size_t d = 0; d < dim; ++d) z += W[c * dim + d] * double(x[d]);
        logits[c] = z;
        mx = std::max(mx, z);
      }
      double denom = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        prob[c] = std::exp(logits[c] - mx);
        denom += prob[c];
      }
      const std::size_t y = class_of(labels[i]);
      for (std::size_t c = 0; c < C; ++c) {
        const double g = prob[c] / denom - (c == y ? 1.0 : 0.0);
        gb[c] += g;
        for (std::size_t d = 0; d < dim; ++d) gW[c * dim + d] += g * double(x[d]);
      }
    }
    const double scale = kLr / double(n_train);
    for (std::size_t i = 0; i < W.size(); ++i) W[i] -= scale * gW[i];
    for (std::size_t c = 0; c < C; ++c) b[c] -= scale * gb[c];
  }

  std::size_t correct = 0;
  for (std::size_t s = n_train; s < n; ++s) {
    const std::size_t i = order[s];
    const auto& x = features[i];
    std::size_t best = 0;
    double best_z = -1e300;
    for (std::size_t c = 0; c < C; ++c) {
      double z = b[c];
      for (std::size_t d = 0; d < dim; ++d) z += W[c * dim + d] * double(x[d]);
      if (z > best_z) {
        best_z = z;
        best = c;
      }
    }
    if (best == class_of(labels[i])) ++correct;
  }
  return double(correct) / double(n - n_train);
}

std::uint64_t fnv1a64(const void* data, std::size_t size) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string config_hash(const nlohmann::json& config) {
  const std::string bytes = config.dump();  // objects serialize with sorted keys
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
  return std::string(buf);
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows)
    rows.push_back({{"horizon_ms", r.horizon_ms},
                    {"frame", r.frame},
                    {"mpjpe_model", r.mpjpe_model},
                    {"mpjpe_zero_velocity", r.mpjpe_zero_velocity},
                    {"mpjpe_const_velocity", r.mpjpe_const_velocity}});
  nlohmann::json j = {
      {"horizons", rows},
      {"average", {{"model", report.average_model},
                   {"zero_velocity", report.average_zero_velocity},
                   {"const_velocity", report.average_const_velocity}}},
      {"sample_count", report.sample_count},
      {"config_hash", report.config_hash},
  };
  if (report.probe_accuracy)
    j["probe_accuracy"] = *report.probe_accuracy;
  else
    j["probe_accuracy"] = nullptr;
  return j;
}

void emit_report(const EvalReport& report, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const auto csv_path = (std::filesystem::path(dir) / "report.csv").string();
  const auto json_path = (std::filesystem::path(dir) / "report.json").string();

  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) fail(ErrorKind::Io, "cannot write " + csv_path);
  csv << "horizon_ms,frame,mpjpe_model,mpjpe_zero_vel,mpjpe_const_vel\n";
  char line[256];
  for (const auto& r : report.rows) {
    std::snprintf(line, sizeof(line), "%d,%zu,%.17g,%.17g,%.17g\n", r.horizon_ms, r.frame,
                  r.mpjpe_model, r.mpjpe_zero_velocity, r.mpjpe_const_velocity);
    csv << line;
  }
  csv.flush();
  if (!csv) fail(ErrorKind::Io, "write failed for " + csv_path);

  std::ofstream js(json_path, std::ios::trunc);
  if (!js) fail(ErrorKind::Io, "cannot write " + json_path);
  js << to_json(report).dump(2) << "\n";
  js.flush();
  if (!js) fail(ErrorKind::Io, "write failed for " + json_path);
}

}  // namespace mrl
