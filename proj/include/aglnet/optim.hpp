#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "aglnet/nn.hpp"

namespace aglnet {

/// lr_min + (lr - lr_min)(1 + cos(pi (step mod P) / P)) / 2, restarting every P steps.
inline double cosine_lr(long long step, double lr, double lr_min, long long period) {
  if (step < 0) throw ValidationError("cosine_lr: negative step");
  if (period < 1) throw ValidationError("cosine_lr: period must be >= 1");
  const double phase = static_cast<double>(step % period) / static_cast<double>(period);
  return lr_min + 0.5 * (lr - lr_min) * (1.0 + std::cos(std::numbers::pi * phase));
}

/// Adam with betas (0.9, 0.999), eps 1e-8, no weight decay.
class Adam {
 public:
  explicit Adam(std::vector<std::pair<std::string, Tensor>> params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, p] : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& p = params_[k].second;
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto w = p.data();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

  [[nodiscard]] long long steps_taken() const { return t_; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  double beta1_;
  double beta2_;
  double eps_;
  long long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace aglnet
