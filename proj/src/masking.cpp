#include "mrl/masking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mrl/errors.hpp"
#include "mrl/rng.hpp"

namespace mrl {

std::vector<double> joint_velocity(const std::vector<float>& x, std::size_t frames,
                                   std::size_t joints, std::size_t coords) {
  if (frames < 2) fail(ErrorKind::InvalidArgument, "joint_velocity: need at least 2 frames");
  if (x.size() != frames * joints * coords)
    fail(ErrorKind::ShapeMismatch, "joint_velocity: buffer size does not match dims");
  std::vector<double> vel((frames - 1) * joints);
  for (std::size_t f = 0; f + 1 < frames; ++f) {
    for (std::size_t j = 0; j < joints; ++j) {
      double sq = 0.0;
      const std::size_t a = (f * joints + j) * coords;
      const std::size_t b = ((f + 1) * joints + j) * coords;
      for (std::size_t k = 0; k < coords; ++k) {
        const double d = static_cast<double>(x[b + k]) - static_cast<double>(x[a + k]);
        sq += d * d;
      }
      vel[f * joints + j] = std::sqrt(sq);
    }
  }
  return vel;
}

MaskPlan build_mask(const std::vector<double>& velocity_mag, std::size_t frames,
                    std::size_t joints, double rate, MaskStrategy strategy, std::uint64_t seed,
                    bool invert) {
  if (rate < 0.0 || rate > 1.0) fail(ErrorKind::InvalidArgument, "build_mask: rate must be in [0,1]");
  if (frames < 2 || joints == 0) fail(ErrorKind::InvalidArgument, "build_mask: need frames >= 2, joints >= 1");
  if (velocity_mag.size() != (frames - 1) * joints)
    fail(ErrorKind::ShapeMismatch, "build_mask: velocity grid size does not match dims");

  MaskPlan plan;
  plan.frames = frames;
  plan.joints = joints;
  plan.rate = rate;
  plan.velocity_mag = velocity_mag;
  plan.masked.assign(frames * joints, 0);

  const std::size_t candidates = (frames - 1) * joints;
  const std::size_t k = static_cast<std::size_t>(std::llround(rate * static_cast<double>(candidates)));

  std::vector<std::size_t> selected;
  selected.reserve(k);
  if (strategy == MaskStrategy::Velocity) {
    std::vector<std::size_t> order(candidates);
    for (std::size_t i = 0; i < candidates; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (velocity_mag[a] != velocity_mag[b]) return velocity_mag[a] > velocity_mag[b];
      return a < b;  // ties: ascending (frame, joint)
    });
    selected.assign(order.begin(), order.begin() + static_cast<long>(k));
    plan.threshold = k == 0 ? std::numeric_limits<double>::infinity() : velocity_mag[order[k - 1]];
  } else {
    Rng rng(seed);
    std::vector<std::size_t> pool(candidates);
    for (std::size_t i = 0; i < candidates; ++i) pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(candidates - i));
      std::swap(pool[i], pool[j]);
      selected.push_back(pool[i]);
    }
    plan.threshold = std::numeric_limits<double>::quiet_NaN();  // not velocity-defined
  }

  if (!invert) {
    for (const std::size_t c : selected) plan.masked[c + joints] = 1;  // shift past frame 1
  } else {
    std::vector<std::uint8_t> in_sel(candidates, 0);
    for (const std::size_t c : selected) in_sel[c] = 1;
    for (std::size_t c = 0; c < candidates; ++c)
      if (!in_sel[c]) plan.masked[c + joints] = 1;
  }
  return plan;
}

std::vector<float> apply_mask(const std::vector<float>& x, std::size_t frames, std::size_t joints,
                              std::size_t coords, const MaskPlan& plan) {
  if (plan.frames != frames || plan.joints != joints)
    fail(ErrorKind::ShapeMismatch, "apply_mask: plan dims do not match input dims");
  if (x.size() != frames * joints * coords)
    fail(ErrorKind::ShapeMismatch, "apply_mask: buffer size does not match dims");
  std::vector<float> out = x;
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t j = 0; j < joints; ++j)
      if (plan.is_masked(f, j))
        for (std::size_t k = 0; k < coords; ++k) out[(f * joints + j) * coords + k] = 0.0f;
  return out;
}

std::vector<float> add_noise(const std::vector<float>& x, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) fail(ErrorKind::InvalidArgument, "add_noise: sigma must be >= 0");
  if (sigma == 0.0) return x;
  std::vector<float> out = x;
  Rng rng(seed);
  for (auto& v : out) v = static_cast<float>(static_cast<double>(v) + rng.normal(0.0, sigma));
  return out;
}

}  // namespace mrl
