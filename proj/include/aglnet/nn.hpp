#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "aglnet/ops.hpp"

namespace aglnet::nn {

using ParameterVisitor = std::function<void(const std::string& name, Tensor& param)>;

/// Anything owning trainable tensors. Children are visited explicitly in a fixed order.
class Module {
 public:
  virtual ~Module() = default;
  virtual void visit_parameters(const ParameterVisitor& fn, const std::string& prefix) = 0;

  [[nodiscard]] std::vector<std::pair<std::string, Tensor>> named_parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    visit_parameters([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); }, "");
    return out;
  }

  [[nodiscard]] std::size_t parameter_count() {
    std::size_t n = 0;
    visit_parameters([&](const std::string&, Tensor& t) { n += t.numel(); }, "");
    return n;
  }

  void zero_grad() {
    visit_parameters([](const std::string&, Tensor& t) { t.zero_grad(); }, "");
  }
};

inline std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

/// Group count used by every normalized conv block: the largest of {4,2,1}
/// dividing the channel count.
inline int norm_groups(int channels) { return std::gcd(channels, 4); }

/// 2-D convolution with square kernel and "same" padding for odd kernels.
class Conv2d : public Module {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, bool bias, std::mt19937_64& rng,
         double gain = std::sqrt(2.0))
      : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride) {
    if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0) {
      throw ValidationError("Conv2d: non-positive configuration");
    }
    weight_ = Tensor({out_channels, in_channels, kernel, kernel}, 0.0, true);
    const double fan_in = static_cast<double>(in_channels) * kernel * kernel;
    const double bound = gain * std::sqrt(3.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : weight_.data()) v = dist(rng);
    if (bias) bias_ = Tensor({1, out_channels, 1, 1}, 0.0, true);
  }

  Tensor forward(const Tensor& x) const {
    if (x.shape().c != in_) {
      throw ValidationError("Conv2d: expected " + std::to_string(in_) + " input channels, got " +
                            std::to_string(x.shape().c));
    }
    return ops::conv2d(x, weight_, bias_, stride_, kernel_ / 2);
  }

  void visit_parameters(const ParameterVisitor& fn, const std::string& prefix) override {
    fn(join(prefix, "weight"), weight_);
    if (bias_.defined()) fn(join(prefix, "bias"), bias_);
  }

  [[nodiscard]] int in_channels() const { return in_; }
  [[nodiscard]] int out_channels() const { return out_; }
  [[nodiscard]] Tensor& weight() { return weight_; }
  [[nodiscard]] Tensor& bias() { return bias_; }

 private:
  int in_ = 0;
  int out_ = 0;
  int kernel_ = 1;
  int stride_ = 1;
  Tensor weight_;
  Tensor bias_;
};

class GroupNorm : public Module {
 public:
  GroupNorm() = default;
  explicit GroupNorm(int channels)
      : groups_(norm_groups(channels)),
        gamma_({1, channels, 1, 1}, 1.0, true),
        beta_({1, channels, 1, 1}, 0.0, true) {}

  Tensor forward(const Tensor& x) const { return ops::group_norm(x, gamma_, beta_, groups_); }

  void visit_parameters(const ParameterVisitor& fn, const std::string& prefix) override {
    fn(join(prefix, "gamma"), gamma_);
    fn(join(prefix, "beta"), beta_);
  }

 private:
  int groups_ = 1;
  Tensor gamma_;
  Tensor beta_;
};

/// conv → group norm → ReLU, the unit used for every non-head convolution.
class ConvBlock : public Module {
 public:
  ConvBlock() = default;
  ConvBlock(int in_channels, int out_channels, int kernel, std::mt19937_64& rng, int stride = 1)
      : conv_(in_channels, out_channels, kernel, stride, false, rng), norm_(out_channels) {}

  Tensor forward(const Tensor& x) const { return ops::relu(norm_.forward(conv_.forward(x))); }

  void visit_parameters(const ParameterVisitor& fn, const std::string& prefix) override {
    conv_.visit_parameters(fn, join(prefix, "conv"));
    norm_.visit_parameters(fn, join(prefix, "norm"));
  }

  [[nodiscard]] int out_channels() const { return conv_.out_channels(); }
  [[nodiscard]] Conv2d& conv() { return conv_; }

 private:
  Conv2d conv_;
  GroupNorm norm_;
};

/// Linear prediction head: 1x1 conv with bias and no activation.
class Head : public Module {
 public:
  Head() = default;
  Head(int in_channels, int out_channels, std::mt19937_64& rng)
      : conv_(in_channels, out_channels, 1, 1, true, rng, 1.0) {}

  Tensor forward(const Tensor& x) const { return conv_.forward(x); }

  void visit_parameters(const ParameterVisitor& fn, const std::string& prefix) override {
    conv_.visit_parameters(fn, prefix);
  }

 private:
  Conv2d conv_;
};

}  // namespace aglnet::nn
