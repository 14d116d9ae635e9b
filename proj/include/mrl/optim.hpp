#pragma once

// Parameter registry, Adam, cosine-annealed learning rate, gradient clipping.

#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "mrl/errors.hpp"
#include "mrl/tensor.hpp"

namespace mrl {

template <class T>
struct NamedParam {
  std::string name;
  ad::Tensor<T> tensor;
};

// Ordered collection of trainable tensors with unique names.
template <class T>
class ParamGroup {
 public:
  void add(const std::string& name, ad::Tensor<T> t) {
    for (const auto& p : params_)
      if (p.name == name) fail(ErrorKind::InvalidArgument, "duplicate parameter name: " + name);
    t.set_requires_grad(true);
    params_.push_back({name, std::move(t)});
  }

  std::vector<NamedParam<T>>& items() { return params_; }
  const std::vector<NamedParam<T>>& items() const { return params_; }

  ad::Tensor<T>& at(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p.tensor;
    fail(ErrorKind::InvalidArgument, "no parameter named " + name);
  }

  std::size_t total_params() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 private:
  std::vector<NamedParam<T>> params_;
};

// lr(t) = lr_min + (lr_initial - lr_min) * (1 + cos(pi * t / total)) / 2
struct CosineSchedule {
  double lr_initial = 5e-4;
  double lr_min = 0.0;
  long total_steps = 1;

  double lr_at(long step) const {
    if (step < 0) step = 0;
    if (step > total_steps) {
      std::fprintf(stderr, "warning: schedule queried past total_steps (%ld > %ld); clamping\n", step,
                   total_steps);
      step = total_steps;
    }
    const double frac = total_steps > 0 ? static_cast<double>(step) / static_cast<double>(total_steps) : 1.0;
    return lr_min + (lr_initial - lr_min) * 0.5 * (1.0 + std::cos(frac * 3.14159265358979323846));
  }
};

// Adam with bias correction; first and second moments keyed by parameter name
// so they survive checkpoint round-trips.
template <class T>
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamGroup<T>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& p : params.items()) {
      if (!p.tensor.has_grad())
        fail(ErrorKind::MissingGrad, "adam: parameter '" + p.name + "' has no gradient");
      auto& m = m_[p.name];
      auto& v = v_[p.name];
      if (m.size() != p.tensor.size()) m.assign(p.tensor.size(), 0.0);
      if (v.size() != p.tensor.size()) v.assign(p.tensor.size(), 0.0);
      auto val = p.tensor.value();
      auto g = p.tensor.grad();
      for (std::size_t i = 0; i < val.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        val[i] = static_cast<T>(static_cast<double>(val[i]) - lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }

  std::map<std::string, std::vector<double>>& first_moments() { return m_; }
  std::map<std::string, std::vector<double>>& second_moments() { return v_; }
  const std::map<std::string, std::vector<double>>& first_moments() const { return m_; }
  const std::map<std::string, std::vector<double>>& second_moments() const { return v_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
};

// Scales all grads so their global L2 norm is at most max_norm; returns the
// pre-clip norm. max_norm <= 0 disables clipping.
template <class T>
double clip_grad_norm(ParamGroup<T>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params.items()) {
    if (!p.tensor.has_grad()) continue;
    for (const T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (auto& p : params.items()) {
      if (!p.tensor.has_grad()) continue;
      for (T& g : p.tensor.grad()) g = static_cast<T>(static_cast<double>(g) * s);
    }
  }
  return norm;
}

}  // namespace mrl
