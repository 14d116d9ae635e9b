#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mrl/errors.hpp"
#include "mrl/masking.hpp"
#include "mrl/rng.hpp"

using namespace mrl;

namespace {

// Brute-force reference: full sort of (magnitude desc, index asc), take k.
std::vector<std::size_t> oracle_select(const std::vector<double>& vel, std::size_t k) {
  std::vector<std::size_t> idx(vel.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (vel[a] != vel[b]) return vel[a] > vel[b];
    return a < b;
  });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

TEST_CASE("joint velocity basics") {
  // static sequence -> zeros
  std::vector<float> stat(4 * 2 * 3, 1.5f);
  auto v0 = joint_velocity(stat, 4, 2, 3);
  for (const double v : v0) CHECK(v == 0.0);

  // 1 joint, K=1, frames [0,1,3] -> [1,2]
  std::vector<float> line = {0, 1, 3};
  auto v1 = joint_velocity(line, 3, 1, 1);
  REQUIRE(v1.size() == 2);
  CHECK(v1[0] == doctest::Approx(1.0));
  CHECK(v1[1] == doctest::Approx(2.0));

  // K=3, step (3,4,0) -> 5
  std::vector<float> step = {0, 0, 0, 3, 4, 0};
  auto v2 = joint_velocity(step, 2, 1, 3);
  CHECK(v2[0] == doctest::Approx(5.0));

  std::vector<float> tooshort = {0, 0, 0};
  CHECK_THROWS_AS(joint_velocity(tooshort, 1, 1, 3), Error);
}

TEST_CASE("velocity mask worked example") {
  // T=3, J=2; joint A frames [0,1,3], joint B static; r=0.5
  // magnitudes: frame1->2: A=1 B=0; frame2->3: A=2 B=0
  std::vector<double> vel = {1, 0, 2, 0};
  auto plan = build_mask(vel, 3, 2, 0.5, MaskStrategy::Velocity, 0);
  CHECK(plan.masked_count() == 2);
  CHECK(plan.is_masked(1, 0));  // frame 2, joint A
  CHECK(plan.is_masked(2, 0));  // frame 3, joint A
  CHECK_FALSE(plan.is_masked(0, 0));
  CHECK_FALSE(plan.is_masked(1, 1));
  CHECK(plan.threshold == doctest::Approx(1.0));
}

TEST_CASE("zero rate and total ties") {
  std::vector<double> vel(4 * 3, 0.0);
  auto empty = build_mask(vel, 5, 3, 0.0, MaskStrategy::Velocity, 0);
  CHECK(empty.masked_count() == 0);
  CHECK(std::isinf(empty.threshold));

  // all-zero velocities, r=0.75, T=5, J=4 -> first 12 candidates in order
  std::vector<double> flat(4 * 4, 0.0);
  auto plan = build_mask(flat, 5, 4, 0.75, MaskStrategy::Velocity, 0);
  CHECK(plan.masked_count() == 12);
  std::size_t seen = 0;
  for (std::size_t f = 1; f < 5 && seen < 12; ++f)
    for (std::size_t j = 0; j < 4 && seen < 12; ++j, ++seen) CHECK(plan.is_masked(f, j));
  CHECK_FALSE(plan.is_masked(4, 1));  // 13th candidate stays visible
}

TEST_CASE("frame 1 is never hidden by any strategy") {
  mrl::Rng rng(3);
  for (int it = 0; it < 20; ++it) {
    const std::size_t T = 2 + rng.below(10);
    const std::size_t J = 1 + rng.below(8);
    std::vector<double> vel((T - 1) * J);
    for (auto& v : vel) v = rng.uniform();
    for (const auto strat : {MaskStrategy::Velocity, MaskStrategy::Random}) {
      auto plan = build_mask(vel, T, J, 0.9, strat, 42 + it);
      for (std::size_t j = 0; j < J; ++j) CHECK_FALSE(plan.is_masked(0, j));
    }
  }
}

TEST_CASE("mask count matches brute-force oracle on 100 random instances including ties") {
  mrl::Rng rng(99);
  for (int it = 0; it < 100; ++it) {
    const std::size_t T = 2 + rng.below(15);   // <= 16
    const std::size_t J = 1 + rng.below(24);   // <= 24
    const double rates[] = {0.0, 0.25, 0.5, 0.75};
    const double r = rates[rng.below(4)];
    std::vector<double> vel((T - 1) * J);
    for (auto& v : vel) {
      // quantized values to force plenty of ties
      v = 0.25 * static_cast<double>(rng.below(5));
    }
    auto plan = build_mask(vel, T, J, r, MaskStrategy::Velocity, 0);
    const auto k = static_cast<std::size_t>(std::llround(r * static_cast<double>((T - 1) * J)));
    CHECK(plan.masked_count() == k);
    const auto expect = oracle_select(vel, k);
    std::vector<std::size_t> got;
    for (std::size_t f = 1; f < T; ++f)
      for (std::size_t j = 0; j < J; ++j)
        if (plan.is_masked(f, j)) got.push_back((f - 1) * J + j);
    CHECK(got == expect);
  }
}

TEST_CASE("velocity dominance: masked minimum >= unmasked maximum") {
  mrl::Rng rng(17);
  for (int it = 0; it < 30; ++it) {
    const std::size_t T = 3 + rng.below(10);
    const std::size_t J = 2 + rng.below(6);
    std::vector<double> vel((T - 1) * J);
    for (auto& v : vel) v = rng.uniform();
    auto plan = build_mask(vel, T, J, 0.5, MaskStrategy::Velocity, 0);
    double masked_min = std::numeric_limits<double>::infinity();
    double unmasked_max = 0.0;
    for (std::size_t f = 1; f < T; ++f)
      for (std::size_t j = 0; j < J; ++j) {
        const double v = vel[(f - 1) * J + j];
        if (plan.is_masked(f, j))
          masked_min = std::min(masked_min, v);
        else
          unmasked_max = std::max(unmasked_max, v);
      }
    CHECK(masked_min >= unmasked_max);
  }
}

TEST_CASE("random strategy is pure in seed and hits the same count") {
  std::vector<double> vel(6 * 4, 0.0);
  auto a = build_mask(vel, 7, 4, 0.5, MaskStrategy::Random, 11);
  auto b = build_mask(vel, 7, 4, 0.5, MaskStrategy::Random, 11);
  auto c = build_mask(vel, 7, 4, 0.5, MaskStrategy::Random, 12);
  CHECK(a.masked == b.masked);
  CHECK(a.masked_count() == 12);
  CHECK(c.masked_count() == 12);
  CHECK(a.masked != c.masked);
}

TEST_CASE("inverted selection hides the complement") {
  std::vector<double> vel = {1, 0, 2, 0};
  auto plan = build_mask(vel, 3, 2, 0.5, MaskStrategy::Velocity, 0, true);
  CHECK(plan.masked_count() == 2);
  CHECK(plan.is_masked(1, 1));
  CHECK(plan.is_masked(2, 1));
  CHECK_FALSE(plan.is_masked(1, 0));
  CHECK_FALSE(plan.is_masked(0, 0));
}

TEST_CASE("apply_mask zeroes hidden joints and is idempotent") {
  mrl::Rng rng(5);
  const std::size_t T = 4, J = 3, K = 3;
  std::vector<float> x(T * J * K);
  for (auto& v : x) v = static_cast<float>(rng.normal() + 1.0);
  auto vel = joint_velocity(x, T, J, K);

  auto none = build_mask(vel, T, J, 0.0, MaskStrategy::Velocity, 0);
  CHECK(apply_mask(x, T, J, K, none) == x);

  auto plan = build_mask(vel, T, J, 0.5, MaskStrategy::Velocity, 0);
  auto masked = apply_mask(x, T, J, K, plan);
  for (std::size_t f = 0; f < T; ++f)
    for (std::size_t j = 0; j < J; ++j)
      for (std::size_t k = 0; k < K; ++k) {
        const float v = masked[(f * J + j) * K + k];
        if (plan.is_masked(f, j))
          CHECK(v == 0.0f);
        else
          CHECK(v == x[(f * J + j) * K + k]);
      }
  CHECK(apply_mask(masked, T, J, K, plan) == masked);

  auto full = build_mask(vel, T, J, 1.0, MaskStrategy::Velocity, 0);
  auto gone = apply_mask(x, T, J, K, full);
  for (std::size_t f = 1; f < T; ++f)
    for (std::size_t j = 0; j < J; ++j)
      for (std::size_t k = 0; k < K; ++k) CHECK(gone[(f * J + j) * K + k] == 0.0f);

  MaskPlan bad = plan;
  bad.joints = J + 1;
  CHECK_THROWS_AS(apply_mask(x, T, J, K, bad), Error);
}

TEST_CASE("noise corruption is seeded, unbiased, and optional") {
  std::vector<float> x(100000, 0.25f);
  auto same = add_noise(x, 0.0, 7);
  CHECK(same == x);

  auto a = add_noise(x, 0.05, 7);
  auto b = add_noise(x, 0.05, 7);
  CHECK(a == b);

  double mean = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mean += a[i] - x[i];
  mean /= static_cast<double>(x.size());
  CHECK(std::abs(mean) < 3.0 * 0.05 / std::sqrt(100000.0));
}
