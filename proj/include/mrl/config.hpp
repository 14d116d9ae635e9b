#pragma once

// Keyed run configuration: JSON documents merged over defaults with a strict
// schema (unknown keys, wrong types, and out-of-range values are rejected
// with the offending key in the message).

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrl/masking.hpp"
#include "mrl/model.hpp"
#include "mrl/training.hpp"

namespace mrl {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "out";

  ModelConfig model;  // defaults: C=128, 8 heads x 32, N=M=3, T=10, L=25, J=22

  struct Data {
    std::string dataset;          // path to an index.json
    std::uint32_t fps = 25;
    bool center_on_root = false;
    std::size_t train_stride = 1;
    std::size_t eval_stride = 0;  // 0 = future window length
    double holdout_fraction = 0.25;
    // synth generation
    std::size_t classes = 4;
    std::size_t per_class = 8;
    std::size_t frames = 140;
  } data;

  struct Mask {
    double rate = 0.75;
    MaskStrategy strategy = MaskStrategy::Velocity;
    bool invert = false;
  } mask;

  struct Pretrain {
    long steps = 3000;
    PretrainMode mode = PretrainMode::Mask;
    double noise_sigma = 0.05;
    double alpha = 1.0;
  } pretrain;

  struct Train {
    double lr = 5e-4;
    std::size_t batch = 24;
    double grad_clip = 0.0;  // 0 = off
  } train;

  struct Finetune {
    long steps = 3000;
    bool freeze_pme = false;
  } finetune;

  struct Eval {
    std::vector<int> horizons_ms = {80, 160, 320, 400, 560, 1000};
    std::size_t batch = 32;
    double probe_split = 0.5;
  } eval;

  TrainConfig pretrain_config() const;
  TrainConfig finetune_config() const;

  // Canonical full dump (every key, sorted); input to config_hash and stored
  // in checkpoint metadata.
  nlohmann::json to_json() const;
};

RunConfig parse_config(const nlohmann::json& doc);
RunConfig parse_config_file(const std::string& path);

}  // namespace mrl
