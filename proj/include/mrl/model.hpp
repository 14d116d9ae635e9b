#pragma once

// The network: joint embedders with trainable positional encodings, temporal
// and spatial attention sublayers, the past-motion encoder (stack of
// spatiotemporal self-attention blocks), the future-motion predictor (blocks
// of self-attention followed by cross-attention into the encoded past), and a
// shared linear predict head.
//
// All internal tensors are rank-4 (batch, frames, joints, channels). Scalar
// type is templated: float for training, double for gradient verification.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mrl/errors.hpp"
#include "mrl/optim.hpp"
#include "mrl/rng.hpp"
#include "mrl/tensor.hpp"

namespace mrl {

enum class Fusion { CrossAttention, Add, Concat };
enum class Layout { Sequential, Parallel };

struct ModelConfig {
  std::size_t channels = 128;  // C
  std::size_t heads = 8;
  std::size_t head_dim = 32;
  std::size_t pme_layers = 3;  // N
  std::size_t fmp_layers = 3;  // M
  std::size_t past_frames = 10;   // T
  std::size_t future_frames = 25; // L
  std::size_t joints = 22;        // J
  std::size_t coords = 3;         // K
  Fusion fusion = Fusion::CrossAttention;
  Layout layout = Layout::Sequential;

  std::size_t inner_width() const { return heads * head_dim; }
};

template <class T>
class Model {
 public:
  using Tensor = ad::Tensor<T>;

  struct AttnParams {
    Tensor Wq, bq, Wk, bk, Wv, bv, Wo, bo, ln_g, ln_b;
  };
  struct StBlockParams {
    AttnParams t, s;
  };
  struct FmpBlockParams {
    StBlockParams st;
    AttnParams ct, cs;      // cross temporal / cross spatial
    Tensor fuse_W, fuse_b;  // add/concat fusion projection
  };
  struct EmbedderParams {
    Tensor W, b, Pt, Ps;
  };

  explicit Model(const ModelConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    if (cfg.channels == 0 || cfg.heads == 0 || cfg.head_dim == 0 || cfg.joints == 0 ||
        cfg.coords == 0 || cfg.past_frames < 2 || cfg.future_frames < 1 || cfg.pme_layers < 1 ||
        cfg.fmp_layers < 1)
      fail(ErrorKind::Config, "model: invalid configuration");
    build();
    init(seed);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamGroup<T>& params() { return params_; }
  const ParamGroup<T>& params() const { return params_; }
  std::size_t param_count() const { return params_.total_params(); }

  // --- instrumentation -----------------------------------------------------
  std::size_t pme_forward_count() const { return pme_forward_count_; }
  void reset_pme_forward_count() { pme_forward_count_ = 0; }
  void set_capture_scores(bool on) {
    capture_scores_ = on;
    captured_scores_.clear();
  }
  const std::vector<Tensor>& captured_scores() const { return captured_scores_; }

  // --- building blocks -----------------------------------------------------

  // x: (B, F, J, K) -> (B, F, J, C)
  Tensor embed(const Tensor& x, const EmbedderParams& emb) const {
    check_rank4(x, "embed");
    const std::size_t F = x.shape()[1];
    if (emb.Pt.shape()[0] != F)
      fail(ErrorKind::ShapeMismatch, "embed: input has " + std::to_string(F) +
                                         " frames but temporal encoding expects " +
                                         std::to_string(emb.Pt.shape()[0]));
    if (x.shape()[2] != cfg_.joints || x.shape()[3] != cfg_.coords)
      fail(ErrorKind::ShapeMismatch, "embed: input dims " + ad::shape_str(x.shape()) +
                                         " do not match configured joints/coords");
    auto h = ad::add(ad::matmul(x, emb.W), emb.b);
    h = ad::add(h, ad::reshape(emb.Pt, {F, std::size_t{1}, cfg_.channels}));
    return ad::add(h, emb.Ps);
  }

  Tensor embed_past(const Tensor& x) const { return embed(x, emb_past_); }
  Tensor embed_future(const Tensor& x) const { return embed(x, emb_fut_); }

  // Multi-head attention sublayer with pre-normalization and residual.
  // temporal: mixes frames per joint; spatial: mixes joints per frame.
  // context == nullptr selects self-attention.
  Tensor attention(const Tensor& h, const Tensor* context, const AttnParams& p,
                   bool temporal) const {
    check_rank4(h, "attention");
    if (h.shape()[3] != cfg_.channels)
      fail(ErrorKind::ShapeMismatch, "attention: input channels " + std::to_string(h.shape()[3]) +
                                         " != configured " + std::to_string(cfg_.channels));
    const std::size_t B = h.shape()[0], F = h.shape()[1], J = h.shape()[2];
    const std::size_t H = cfg_.heads, D = cfg_.head_dim;

    auto x = ad::layer_normalize(h, -1, p.ln_g, p.ln_b);
    Tensor xc = x;
    std::size_t Fc = F;
    if (context) {
      check_rank4(*context, "attention context");
      if (context->shape()[2] != J)
        fail(ErrorKind::ShapeMismatch,
             "attention: context joints " + std::to_string(context->shape()[2]) + " != " +
                 std::to_string(J));
      if (context->shape()[3] != cfg_.channels)
        fail(ErrorKind::ShapeMismatch, "attention: context channel mismatch");
      xc = ad::layer_normalize(*context, -1, p.ln_g, p.ln_b);
      Fc = context->shape()[1];
      if (!temporal && Fc != F) {
        // spatial cross-attention aligns frames by mean-pooling the context
        xc = ad::mean_over_axis(xc, 1, true);
        Fc = 1;
      }
    }

    auto q = ad::reshape(ad::add(ad::matmul(x, p.Wq), p.bq), {B, F, J, H, D});
    auto k = ad::reshape(ad::add(ad::matmul(xc, p.Wk), p.bk), {B, Fc, J, H, D});
    auto v = ad::reshape(ad::add(ad::matmul(xc, p.Wv), p.bv), {B, Fc, J, H, D});

    Tensor z;
    const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(D)));
    if (temporal) {
      auto qp = ad::permute(q, {0, 2, 3, 1, 4});  // (B,J,H,F,D)
      auto kp = ad::permute(k, {0, 2, 3, 4, 1});  // (B,J,H,D,Fc)
      auto vp = ad::permute(v, {0, 2, 3, 1, 4});  // (B,J,H,Fc,D)
      auto scores = ad::softmax(ad::scale(ad::matmul(qp, kp), inv_sqrt_d), -1);
      if (capture_scores_) captured_scores_.push_back(scores);
      z = ad::permute(ad::matmul(scores, vp), {0, 3, 1, 2, 4});  // (B,F,J,H,D)
    } else {
      auto qp = ad::permute(q, {0, 1, 3, 2, 4});  // (B,F,H,J,D)
      auto kp = ad::permute(k, {0, 1, 3, 4, 2});  // (B,Fc,H,D,J)
      auto vp = ad::permute(v, {0, 1, 3, 2, 4});  // (B,Fc,H,J,D)
      auto scores = ad::softmax(ad::scale(ad::matmul(qp, kp), inv_sqrt_d), -1);
      if (capture_scores_) captured_scores_.push_back(scores);
      z = ad::permute(ad::matmul(scores, vp), {0, 1, 3, 2, 4});  // (B,F,J,H,D)
    }
    auto merged = ad::reshape(z, {B, F, J, H * D});
    auto out = ad::add(ad::matmul(merged, p.Wo), p.bo);
    return ad::add(h, out);
  }

  Tensor st_block(const Tensor& h, const StBlockParams& blk) const {
    if (cfg_.layout == Layout::Sequential)
      return attention(attention(h, nullptr, blk.t, true), nullptr, blk.s, false);
    auto t = attention(h, nullptr, blk.t, true);
    auto s = attention(h, nullptr, blk.s, false);
    return ad::scale(ad::add(t, s), static_cast<T>(0.5));
  }

  Tensor pmg_block(const Tensor& h, const Tensor& h_past, const FmpBlockParams& blk) const {
    if (!h_past.defined())
      fail(ErrorKind::InvalidArgument, "pmg_block: past features are required");
    if (h_past.shape()[3] != cfg_.channels)
      fail(ErrorKind::ShapeMismatch, "pmg_block: past feature channel mismatch");
    switch (cfg_.fusion) {
      case Fusion::CrossAttention: {
        auto a = attention(h, &h_past, blk.ct, true);
        return attention(a, &h_past, blk.cs, false);
      }
      case Fusion::Add: {
        auto ctx = aligned_context(h, h_past);
        auto proj = ad::add(ad::matmul(ctx, blk.fuse_W), blk.fuse_b);
        return ad::add(h, proj);
      }
      case Fusion::Concat: {
        auto ctx = aligned_context(h, h_past);
        if (ctx.shape()[1] != h.shape()[1]) {
          // materialize the pooled frame across the future length
          auto zeros = Tensor::zeros({h.shape()[0], h.shape()[1], h.shape()[2], cfg_.channels});
          ctx = ad::add(ctx, zeros);
        }
        auto cat = ad::concat(h, ctx, -1);  // (B,L,J,2C)
        auto proj = ad::add(ad::matmul(cat, blk.fuse_W), blk.fuse_b);
        return ad::add(h, proj);
      }
    }
    fail(ErrorKind::Config, "pmg_block: unknown fusion mode");
  }

  // (B,T,J,C) -> (B,T,J,C): N spatiotemporal self-attention blocks
  Tensor pme_forward(const Tensor& h_emb) const {
    check_rank4(h_emb, "pme_forward");
    pme_forward_count_ += h_emb.shape()[0];
    Tensor h = h_emb;
    for (const auto& blk : pme_) h = st_block(h, blk);
    return h;
  }

  // (B,L,J,C) x (B,T,J,C) -> (B,L,J,C): M blocks of ST then cross into past
  Tensor fmp_forward(const Tensor& h_future, const Tensor& h_past) const {
    check_rank4(h_future, "fmp_forward");
    Tensor h = h_future;
    for (const auto& blk : fmp_) {
      h = st_block(h, blk.st);
      h = pmg_block(h, h_past, blk);
    }
    return h;
  }

  // (B,F,J,C) -> (B,F,J,K)
  Tensor predict_head(const Tensor& h) const {
    return ad::add(ad::matmul(h, head_W_), head_b_);
  }

  // --- composed paths --------------------------------------------------------

  Tensor encode_past(const Tensor& x_past) const { return pme_forward(embed_past(x_past)); }

  Tensor reconstruct_past(const Tensor& x_masked) const {
    return predict_head(pme_forward(embed_past(x_masked)));
  }

  Tensor reconstruct_future(const Tensor& x_masked_future, const Tensor& h_past) const {
    if (!h_past.defined())
      fail(ErrorKind::InvalidArgument, "reconstruct_future: encoded past features are required");
    return predict_head(fmp_forward(embed_future(x_masked_future), h_past));
  }

  // (B,T,J,K) -> (B,L,J,K); the future stream starts from zero coordinates so
  // only the future embedder's bias and positional encodings remain.
  Tensor predict_future(const Tensor& x_past) const {
    auto h_past = encode_past(x_past);
    auto zf = Tensor::zeros({x_past.shape()[0], cfg_.future_frames, cfg_.joints, cfg_.coords});
    return predict_head(fmp_forward(embed_future(zf), h_past));
  }

  // Penultimate representation pooled over frames and joints: (B, C).
  Tensor features(const Tensor& x_past) const {
    auto h_past = encode_past(x_past);
    auto zf = Tensor::zeros({x_past.shape()[0], cfg_.future_frames, cfg_.joints, cfg_.coords});
    auto z = fmp_forward(embed_future(zf), h_past);
    return ad::mean_over_axis(ad::mean_over_axis(z, 1, false), 1, false);
  }

  const EmbedderParams& past_embedder() const { return emb_past_; }
  const EmbedderParams& future_embedder() const { return emb_fut_; }
  const std::vector<StBlockParams>& pme_blocks() const { return pme_; }
  const std::vector<FmpBlockParams>& fmp_blocks() const { return fmp_; }

 private:
  static void check_rank4(const Tensor& t, const char* where) {
    if (!t.defined() || t.rank() != 4)
      fail(ErrorKind::ShapeMismatch,
           std::string(where) + ": expected rank-4 (batch, frames, joints, channels) tensor");
  }

  // Past features aligned to the future frame axis: identity when the frame
  // counts match, otherwise mean-pooled to a single broadcastable frame.
  Tensor aligned_context(const Tensor& h, const Tensor& h_past) const {
    if (h_past.shape()[1] == h.shape()[1]) return h_past;
    return ad::mean_over_axis(h_past, 1, true);
  }

  Tensor reg(const std::string& name, ad::Shape shape) {
    auto t = Tensor::zeros(std::move(shape), true);
    params_.add(name, t);
    return t;
  }

  AttnParams reg_attn(const std::string& prefix) {
    const std::size_t C = cfg_.channels, W = cfg_.inner_width();
    AttnParams p;
    p.Wq = reg(prefix + ".q.W", {C, W});
    p.bq = reg(prefix + ".q.b", {W});
    p.Wk = reg(prefix + ".k.W", {C, W});
    p.bk = reg(prefix + ".k.b", {W});
    p.Wv = reg(prefix + ".v.W", {C, W});
    p.bv = reg(prefix + ".v.b", {W});
    p.Wo = reg(prefix + ".o.W", {W, C});
    p.bo = reg(prefix + ".o.b", {C});
    p.ln_g = reg(prefix + ".ln.g", {C});
    p.ln_b = reg(prefix + ".ln.b", {C});
    return p;
  }

  void build() {
    const std::size_t C = cfg_.channels;
    emb_past_.W = reg("emb_past.W", {cfg_.coords, C});
    emb_past_.b = reg("emb_past.b", {C});
    emb_past_.Pt = reg("emb_past.Pt", {cfg_.past_frames, C});
    emb_past_.Ps = reg("emb_past.Ps", {cfg_.joints, C});
    emb_fut_.W = reg("emb_fut.W", {cfg_.coords, C});
    emb_fut_.b = reg("emb_fut.b", {C});
    emb_fut_.Pt = reg("emb_fut.Pt", {cfg_.future_frames, C});
    emb_fut_.Ps = reg("emb_fut.Ps", {cfg_.joints, C});
    for (std::size_t i = 0; i < cfg_.pme_layers; ++i) {
      const std::string p = "pme" + std::to_string(i);
      StBlockParams blk;
      blk.t = reg_attn(p + ".t");
      blk.s = reg_attn(p + ".s");
      pme_.push_back(blk);
    }
    for (std::size_t i = 0; i < cfg_.fmp_layers; ++i) {
      const std::string p = "fmp" + std::to_string(i);
      FmpBlockParams blk;
      blk.st.t = reg_attn(p + ".t");
      blk.st.s = reg_attn(p + ".s");
      if (cfg_.fusion == Fusion::CrossAttention) {
        blk.ct = reg_attn(p + ".ct");
        blk.cs = reg_attn(p + ".cs");
      } else if (cfg_.fusion == Fusion::Add) {
        blk.fuse_W = reg(p + ".fuse.W", {C, C});
        blk.fuse_b = reg(p + ".fuse.b", {C});
      } else {
        blk.fuse_W = reg(p + ".fuse.W", {2 * C, C});
        blk.fuse_b = reg(p + ".fuse.b", {C});
      }
      fmp_.push_back(blk);
    }
    head_W_ = reg("head.W", {C, cfg_.coords});
    head_b_ = reg("head.b", {cfg_.coords});
  }

  static bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  }

  void init(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& entry : params_.items()) {
      auto vals = entry.tensor.value();
      if (ends_with(entry.name, ".Pt") || ends_with(entry.name, ".Ps")) {
        for (auto& v : vals) v = static_cast<T>(rng.normal(0.0, 0.02));
      } else if (ends_with(entry.name, ".W")) {
        const auto& sh = entry.tensor.shape();
        const double bound = std::sqrt(6.0 / static_cast<double>(sh[0] + sh[1]));
        for (auto& v : vals) v = static_cast<T>(rng.uniform(-bound, bound));
      } else if (ends_with(entry.name, ".g")) {
        for (auto& v : vals) v = static_cast<T>(1);
      } else {
        for (auto& v : vals) v = static_cast<T>(0);  // biases
      }
    }
  }

  ModelConfig cfg_;
  ParamGroup<T> params_;
  EmbedderParams emb_past_, emb_fut_;
  std::vector<StBlockParams> pme_;
  std::vector<FmpBlockParams> fmp_;
  Tensor head_W_, head_b_;
  // atomic so read-only evaluation may shard batches across threads
  mutable std::atomic<std::size_t> pme_forward_count_{0};
  mutable bool capture_scores_ = false;
  mutable std::vector<Tensor> captured_scores_;
};

// Packs per-sample windows (row-major F*J*K floats) into a batch tensor.
template <class T>
ad::Tensor<T> make_batch(const std::vector<const std::vector<float>*>& samples, std::size_t frames,
                         std::size_t joints, std::size_t coords) {
  if (samples.empty()) fail(ErrorKind::InvalidArgument, "make_batch: empty batch");
  const std::size_t per = frames * joints * coords;
  std::vector<T> data;
  data.reserve(samples.size() * per);
  for (const auto* s : samples) {
    if (!s || s->size() != per)
      fail(ErrorKind::ShapeMismatch, "make_batch: sample size does not match dims");
    for (const float v : *s) data.push_back(static_cast<T>(v));
  }
  return ad::Tensor<T>::from({samples.size(), frames, joints, coords}, std::move(data));
}

}  // namespace mrl
