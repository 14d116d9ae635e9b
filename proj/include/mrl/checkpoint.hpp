#pragma once

// MCKP checkpoint container: named f32 tensors (model parameters plus
// optimizer moments) and a JSON metadata blob (config snapshot, step, seed).

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrl/model.hpp"
#include "mrl/optim.hpp"

namespace mrl {

struct CheckpointData {
  struct Entry {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
  };
  std::vector<Entry> tensors;
  nlohmann::json metadata;  // {"config": ..., "step": n, "seed": n, "opt_step": n}

  const Entry* find(const std::string& name) const {
    for (const auto& e : tensors)
      if (e.name == name) return &e;
    return nullptr;
  }
};

void save_checkpoint(const std::string& path, const CheckpointData& ckpt);
CheckpointData load_checkpoint(const std::string& path);

// Captures model parameters (and optimizer moments when opt != nullptr).
CheckpointData snapshot(const Model<float>& model, const Adam<float>* opt, long step,
                        const nlohmann::json& config, std::uint64_t seed);

// Writes checkpoint tensors back into the model (and optimizer when given);
// verifies shapes and dies naming the offending tensor. Nothing is modified
// until the whole file has parsed.
void restore(Model<float>& model, Adam<float>* opt, const CheckpointData& ckpt);

}  // namespace mrl
