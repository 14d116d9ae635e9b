#pragma once

// Two-stage training: losses, the pretrain/finetune step loops, and batch
// scheduling. Loss functions are templated so the whole training graph can be
// rebuilt in f64 for gradient verification.

#include <cstdint>
#include <string>
#include <vector>

#include "mrl/masking.hpp"
#include "mrl/model.hpp"
#include "mrl/motiondata.hpp"
#include "mrl/optim.hpp"
#include "mrl/tensor.hpp"

namespace mrl {

// Mean over (batch, frames, joints) of the squared Euclidean reconstruction
// error, past term plus alpha-weighted future term.
template <class T>
ad::Tensor<T> pretrain_loss(const ad::Tensor<T>& rec_past, const ad::Tensor<T>& gt_past,
                            const ad::Tensor<T>& rec_future, const ad::Tensor<T>& gt_future,
                            double alpha) {
  if (rec_past.shape() != gt_past.shape() || rec_future.shape() != gt_future.shape())
    fail(ErrorKind::ShapeMismatch, "pretrain_loss: prediction/target shapes differ");
  const auto& sp = rec_past.shape();
  const auto& sf = rec_future.shape();
  const T past_norm = static_cast<T>(1.0 / static_cast<double>(sp[0] * sp[1] * sp[2]));
  const T fut_norm = static_cast<T>(alpha / static_cast<double>(sf[0] * sf[1] * sf[2]));
  auto dp = ad::sub(gt_past, rec_past);
  auto df = ad::sub(gt_future, rec_future);
  return ad::add(ad::scale(ad::sum(ad::mul(dp, dp)), past_norm),
                 ad::scale(ad::sum(ad::mul(df, df)), fut_norm));
}

// Mean over (batch, frames, joints) of the squared Euclidean prediction error.
template <class T>
ad::Tensor<T> finetune_loss(const ad::Tensor<T>& pred, const ad::Tensor<T>& gt) {
  if (pred.shape() != gt.shape())
    fail(ErrorKind::ShapeMismatch, "finetune_loss: prediction/target shapes differ");
  const auto& s = pred.shape();
  const T norm = static_cast<T>(1.0 / static_cast<double>(s[0] * s[1] * s[2]));
  auto d = ad::sub(gt, pred);
  return ad::scale(ad::sum(ad::mul(d, d)), norm);
}

enum class PretrainMode { Mask, Denoise, None };

struct TrainConfig {
  std::size_t batch = 24;
  double lr = 5e-4;
  long steps = 3000;
  double alpha = 1.0;
  double mask_rate = 0.75;
  PretrainMode mode = PretrainMode::Mask;
  MaskStrategy strategy = MaskStrategy::Velocity;
  bool invert_mask = false;
  double noise_sigma = 0.05;
  double grad_clip = 0.0;  // 0 = off
  bool freeze_pme = false;
  std::uint64_t seed = 0;
};

// Drives Adam with a cosine-annealed learning rate over shuffled batches of
// sample windows. One trainer instance per stage (fresh optimizer state).
class Trainer {
 public:
  Trainer(Model<float>& model, std::vector<SampleWindow> windows, const TrainConfig& cfg);

  // One optimization step; returns the loss. Pretraining masks (or corrupts)
  // past and future, reconstructs both, and encodes the complete past for
  // guidance; mode None is a no-op returning 0.
  double pretrain_step();

  // One supervised prediction step from a zero-initialized future stream.
  double finetune_step();

  long step() const { return step_; }
  double last_lr() const { return last_lr_; }
  Adam<float>& optimizer() { return opt_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  std::vector<std::size_t> next_batch();
  void apply_update();

  Model<float>& model_;
  std::vector<SampleWindow> windows_;
  TrainConfig cfg_;
  Adam<float> opt_;
  CosineSchedule schedule_;
  long step_ = 0;
  double last_lr_ = 0.0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::uint64_t epoch_ = 0;
};

}  // namespace mrl
