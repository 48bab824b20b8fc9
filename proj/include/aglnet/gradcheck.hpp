#pragma once

// Central finite-difference check of reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "aglnet/ops.hpp"

namespace aglnet {

struct GradCheckOptions {
  double step = 1e-6;
  double rtol = 1e-4;
  double atol = 1e-6;
  std::size_t max_per_tensor = 0;  // 0 = every element, otherwise a random sample
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst_excess = 0.0;  // max of |a - n| / allowed
  double kink_margin = 0.0;   // min |relu input| at the base point
  std::string worst;

  [[nodiscard]] bool ok() const { return checked > 0 && failed == 0; }
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// `loss` must build a fresh graph on every call and return a scalar.
inline GradCheckResult grad_check(const std::function<Tensor()>& loss, const NamedTensors& wrt,
                                  const GradCheckOptions& opt = {}) {
  GradCheckResult res;
  for (const auto& [name, t] : wrt) {
    Tensor h = t;
    h.zero_grad();
    h.set_requires_grad(true);
  }
  {
    ops::KinkMonitorScope kinks;
    Tensor y = loss();
    if (y.numel() != 1) throw ValidationError("grad_check: loss must be a scalar");
    y.backward();
    res.kink_margin = kinks.min_abs_input();
  }
  std::mt19937_64 rng(opt.seed);
  for (const auto& [name, t] : wrt) {
    Tensor x = t;
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    std::vector<std::size_t> idx(x.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (opt.max_per_tensor > 0 && idx.size() > opt.max_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_per_tensor);
    }
    for (std::size_t i : idx) {
      const double orig = x.data()[i];
      x.data()[i] = orig + opt.step;
      const double up = loss().item();
      x.data()[i] = orig - opt.step;
      const double down = loss().item();
      x.data()[i] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[i];
      const double allowed = std::max(opt.atol, opt.rtol * std::max(std::abs(a), std::abs(numeric)));
      const double excess = std::abs(a - numeric) / allowed;
      ++res.checked;
      if (excess > 1.0) ++res.failed;
      if (excess > res.worst_excess) {
        res.worst_excess = excess;
        std::ostringstream os;
        os << name << "[" << i << "] analytic=" << a << " numeric=" << numeric;
        res.worst = os.str();
      }
    }
  }
  return res;
}

}  // namespace aglnet
