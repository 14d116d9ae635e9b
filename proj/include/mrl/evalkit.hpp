#pragma once

// Forecast evaluation: mean per-joint position error (MPJPE) at millisecond
// horizons, naive repeat/extrapolate baselines, a linear probe over pooled
// network features, and CSV/JSON report emission.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrl/model.hpp"
#include "mrl/motiondata.hpp"

namespace mrl {

struct EvalReport {
  struct Row {
    int horizon_ms = 0;
    std::size_t frame = 0;  // 1-based future frame
    double mpjpe_model = 0.0;
    double mpjpe_zero_velocity = 0.0;
    double mpjpe_const_velocity = 0.0;
  };
  std::vector<Row> rows;            // one per horizon, strictly increasing ms
  double average_model = 0.0;       // unweighted mean over horizons
  double average_zero_velocity = 0.0;
  double average_const_velocity = 0.0;
  std::size_t sample_count = 0;
  std::optional<double> probe_accuracy;
  std::string config_hash;
};

// MPJPE of a single F*J*K prediction at a 1-based frame index:
// (1/J) * sum_j ||pred[frame,j,:] - gt[frame,j,:]||_2.
double mpjpe(const std::vector<float>& pred, const std::vector<float>& gt, std::size_t frames,
             std::size_t joints, std::size_t coords, std::size_t frame);

enum class Baseline { ZeroVelocity, ConstVelocity };

// Predicts `horizon_frames` future poses from a T*J*K past window: repeat the
// last frame, or extrapolate the last inter-frame displacement.
std::vector<float> baseline_predict(const std::vector<float>& past, std::size_t past_frames,
                                    std::size_t joints, std::size_t coords,
                                    std::size_t horizon_frames, Baseline kind);

// Mean MPJPE of the model and both baselines over all windows at each horizon.
// Windows are processed in batches of `batch`; shards run in parallel (capped
// by MRL_THREADS) and reduce in a fixed order.
EvalReport evaluate(const Model<float>& model, const std::vector<SampleWindow>& windows,
                    const std::vector<int>& horizons_ms, int fps, std::size_t batch = 32);

// Pooled penultimate features (predictor output averaged over frames and
// joints) for each window, for use as probe inputs.
std::vector<std::vector<float>> extract_features(const Model<float>& model,
                                                 const std::vector<SampleWindow>& windows,
                                                 std::size_t batch = 32);

// Multinomial logistic regression on a deterministic split: trains on
// round(split*n) samples with full-batch gradient descent (500 iterations,
// learning rate 0.1), returns accuracy on the remainder.
double linear_probe(const std::vector<std::vector<float>>& features,
                    const std::vector<int>& labels, double split, std::uint64_t seed);

std::uint64_t fnv1a64(const void* data, std::size_t size);

// 16-hex-digit FNV-1a of the canonical (sorted-key) JSON serialization.
std::string config_hash(const nlohmann::json& config);

nlohmann::json to_json(const EvalReport& report);

// Writes report.csv (one row per horizon) and report.json into dir.
void emit_report(const EvalReport& report, const std::string& dir);

}  // namespace mrl
