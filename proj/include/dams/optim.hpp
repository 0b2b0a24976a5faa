#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dams/tensor.hpp"

namespace dams {

/// Linear warmup to base_lr, then inverse-square-root decay.
struct LrSchedule {
  std::size_t warmup_steps = 1;
  double base_lr = 1e-3;

  double at(std::size_t step) const {
    if (warmup_steps == 0) fail(ErrorKind::config, "lr schedule: warmup_steps must be positive");
    if (step == 0) step = 1;
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(warmup_steps);
    if (s <= w) return base_lr * s / w;
    return base_lr * std::sqrt(w / s);
  }
};

inline double lr_at(std::size_t step, const LrSchedule& schedule) { return schedule.at(step); }

template <class T>
struct ParamGroup {
  std::string name;
  std::vector<Tensor<T>> params;
  LrSchedule schedule;
};

/// Global L2 norm of all gradients; rescales them in place when above max_norm.
template <class T>
double clip_grad_norm(std::vector<ParamGroup<T>>& groups, double max_norm) {
  double sq = 0;
  for (auto& g : groups)
    for (auto& p : g.params)
      for (T v : p.grad()) sq += double(v) * double(v);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T f = T(max_norm / (norm + 1e-12));
    for (auto& g : groups)
      for (auto& p : g.params)
        for (auto& v : p.mutable_grad()) v *= f;
  }
  return norm;
}

/// Adam with bias correction. The step counter is shared by all groups.
template <class T>
class Adam {
 public:
  struct Moments {
    std::vector<T> m, v;
  };

  Adam(std::vector<ParamGroup<T>> groups, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& g : groups_)
      for (auto& p : g.params) moments_.push_back({std::vector<T>(p.size(), T(0)), std::vector<T>(p.size(), T(0))});
  }

  void step() {
    for (auto& g : groups_)
      for (auto& p : g.params)
        if (!p.has_grad())
          fail(ErrorKind::usage, "adam: parameter in group '" + g.name + "' has no gradient");
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, double(step_));
    const double bc2 = 1.0 - std::pow(beta2_, double(step_));
    std::size_t k = 0;
    for (auto& g : groups_) {
      const double lr = g.schedule.at(step_);
      for (auto& p : g.params) {
        auto& mo = moments_[k++];
        auto w = p.mutable_values();
        auto gr = p.grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double gi = gr[i];
          mo.m[i] = T(beta1_ * mo.m[i] + (1.0 - beta1_) * gi);
          mo.v[i] = T(beta2_ * mo.v[i] + (1.0 - beta2_) * gi * gi);
          const double mhat = mo.m[i] / bc1;
          const double vhat = mo.v[i] / bc2;
          w[i] = T(w[i] - lr * mhat / (std::sqrt(vhat) + eps_));
        }
      }
    }
  }

  void zero_grad() {
    for (auto& g : groups_)
      for (auto& p : g.params) p.zero_grad();
  }

  std::vector<ParamGroup<T>>& groups() { return groups_; }
  const std::vector<ParamGroup<T>>& groups() const { return groups_; }
  std::vector<Moments>& moments() { return moments_; }
  const std::vector<Moments>& moments() const { return moments_; }
  std::size_t step_count() const { return step_; }
  void set_step_count(std::size_t s) { step_ = s; }

  double clip(double max_norm) { return clip_grad_norm(groups_, max_norm); }

 private:
  std::vector<ParamGroup<T>> groups_;
  std::vector<Moments> moments_;
  double beta1_, beta2_, eps_;
  std::size_t step_ = 0;
};

}  // namespace dams
