#include "mrl/training.hpp"

#include <algorithm>

#include "mrl/rng.hpp"

namespace mrl {

namespace {

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.below(i)]);
}

}  // namespace

Trainer::Trainer(Model<float>& model, std::vector<SampleWindow> windows, const TrainConfig& cfg)
    : model_(model), windows_(std::move(windows)), cfg_(cfg) {
  if (windows_.empty()) fail(ErrorKind::InvalidArgument, "trainer: no sample windows");
  const auto& mc = model_.config();
  for (const auto& w : windows_)
    if (w.past_frames != mc.past_frames || w.future_frames != mc.future_frames ||
        w.joints != mc.joints || w.coord_count != mc.coords)
      fail(ErrorKind::ShapeMismatch, "trainer: window dims do not match model configuration");
  schedule_ = CosineSchedule{cfg_.lr, 0.0, cfg_.steps > 0 ? cfg_.steps : 1};
  order_.resize(windows_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  Rng rng(derive_seed(cfg_.seed, 0x5u + epoch_));
  shuffle_indices(order_, rng);
}

std::vector<std::size_t> Trainer::next_batch() {
  std::vector<std::size_t> picked;
  picked.reserve(cfg_.batch);
  while (picked.size() < cfg_.batch) {
    if (cursor_ == order_.size()) {
      ++epoch_;
      Rng rng(derive_seed(cfg_.seed, 0x5u + epoch_));
      shuffle_indices(order_, rng);
      cursor_ = 0;
    }
    picked.push_back(order_[cursor_++]);
  }
  return picked;
}

void Trainer::apply_update() {
  if (cfg_.grad_clip > 0.0) clip_grad_norm(model_.params(), cfg_.grad_clip);
  if (cfg_.freeze_pme) {
    for (auto& e : model_.params().items())
      if (e.name.rfind("emb_past.", 0) == 0 || e.name.rfind("pme", 0) == 0)
        e.tensor.zero_grad();
  }
  last_lr_ = schedule_.lr_at(step_);
  opt_.step(model_.params(), last_lr_);
  ++step_;
}

double Trainer::pretrain_step() {
  if (cfg_.mode == PretrainMode::None) return 0.0;
  const auto picked = next_batch();
  const auto& mc = model_.config();
  const std::size_t T = mc.past_frames, L = mc.future_frames, J = mc.joints, K = mc.coords;

  std::vector<std::vector<float>> masked_past(picked.size()), masked_future(picked.size());
  const std::uint64_t step_seed = derive_seed(cfg_.seed, 0x9000u + static_cast<std::uint64_t>(step_));
  for (std::size_t i = 0; i < picked.size(); ++i) {
    const auto& w = windows_[picked[i]];
    if (cfg_.mode == PretrainMode::Denoise) {
      masked_past[i] = add_noise(w.past, cfg_.noise_sigma, derive_seed(step_seed, 2 * i));
      masked_future[i] = add_noise(w.future, cfg_.noise_sigma, derive_seed(step_seed, 2 * i + 1));
    } else {
      const auto vp = joint_velocity(w.past, T, J, K);
      const auto plan_p =
          build_mask(vp, T, J, cfg_.mask_rate, cfg_.strategy, derive_seed(step_seed, 2 * i), cfg_.invert_mask);
      masked_past[i] = apply_mask(w.past, T, J, K, plan_p);
      const auto vf = joint_velocity(w.future, L, J, K);
      const auto plan_f = build_mask(vf, L, J, cfg_.mask_rate, cfg_.strategy,
                                     derive_seed(step_seed, 2 * i + 1), cfg_.invert_mask);
      masked_future[i] = apply_mask(w.future, L, J, K, plan_f);
    }
  }

  std::vector<const std::vector<float>*> mp, fp, mf, gp, gf;
  for (std::size_t i = 0; i < picked.size(); ++i) {
    mp.push_back(&masked_past[i]);
    fp.push_back(&windows_[picked[i]].past);
    mf.push_back(&masked_future[i]);
    gp.push_back(&windows_[picked[i]].past);
    gf.push_back(&windows_[picked[i]].future);
  }
  auto masked_past_b = make_batch<float>(mp, T, J, K);
  auto full_past_b = make_batch<float>(fp, T, J, K);
  auto masked_future_b = make_batch<float>(mf, L, J, K);
  auto gt_past_b = make_batch<float>(gp, T, J, K);
  auto gt_future_b = make_batch<float>(gf, L, J, K);

  auto rec_past = model_.reconstruct_past(masked_past_b);
  auto h_past = model_.encode_past(full_past_b);
  auto rec_future = model_.reconstruct_future(masked_future_b, h_past);
  auto loss = pretrain_loss(rec_past, gt_past_b, rec_future, gt_future_b, cfg_.alpha);

  model_.params().zero_grads();
  ad::backward(loss);
  apply_update();
  return static_cast<double>(loss.item());
}

double Trainer::finetune_step() {
  const auto picked = next_batch();
  const auto& mc = model_.config();
  std::vector<const std::vector<float>*> pp, gf;
  for (const auto idx : picked) {
    pp.push_back(&windows_[idx].past);
    gf.push_back(&windows_[idx].future);
  }
  auto past_b = make_batch<float>(pp, mc.past_frames, mc.joints, mc.coords);
  auto gt_b = make_batch<float>(gf, mc.future_frames, mc.joints, mc.coords);

  auto pred = model_.predict_future(past_b);
  auto loss = finetune_loss(pred, gt_b);

  model_.params().zero_grads();
  ad::backward(loss);
  apply_update();
  return static_cast<double>(loss.item());
}

}  // namespace mrl
