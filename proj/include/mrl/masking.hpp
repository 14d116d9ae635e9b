#pragma once

// Velocity-based and random mask construction plus the Gaussian corruption
// used by the denoising pretraining variant.

#include <cstdint>
#include <vector>

namespace mrl {

enum class MaskStrategy { Velocity, Random };

struct MaskPlan {
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::vector<std::uint8_t> masked;      // frames * joints, 1 = hidden
  std::vector<double> velocity_mag;      // (frames-1) * joints
  double threshold = 0.0;                // +inf sentinel when nothing selected
  double rate = 0.0;

  bool is_masked(std::size_t frame, std::size_t joint) const {  // frame 0-based
    return masked[frame * joints + joint] != 0;
  }
  std::size_t masked_count() const {
    std::size_t n = 0;
    for (const auto m : masked) n += m;
    return n;
  }
};

// Per-(step, joint) L2 displacement norm: entry (i, j) covers frames i ->
// i+1 (0-based). Requires frames >= 2.
std::vector<double> joint_velocity(const std::vector<float>& x, std::size_t frames,
                                   std::size_t joints, std::size_t coords);

// Selects round(r * (frames-1) * joints) positions among frames 2..T. The
// velocity strategy takes the largest magnitudes (ties broken by ascending
// (frame, joint)); the random strategy draws uniformly, seeded. Frame 1 is
// never hidden. invert flips the selection to hide the complement instead
// (the literal keep-fast-joints mask orientation).
MaskPlan build_mask(const std::vector<double>& velocity_mag, std::size_t frames,
                    std::size_t joints, double rate, MaskStrategy strategy, std::uint64_t seed,
                    bool invert = false);

// Zeroes all coordinates of hidden (frame, joint) positions.
std::vector<float> apply_mask(const std::vector<float>& x, std::size_t frames, std::size_t joints,
                              std::size_t coords, const MaskPlan& plan);

// x + i.i.d. Gaussian(0, sigma^2) per coordinate, reproducible in seed.
std::vector<float> add_noise(const std::vector<float>& x, double sigma, std::uint64_t seed);

}  // namespace mrl
