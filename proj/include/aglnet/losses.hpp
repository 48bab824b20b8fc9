#pragma once

// Training objective: for each of r_1..r_3, a structure-weighted BCE plus a
// structure-weighted IoU against the object mask, and an MSE between the cue
// prediction and its ground-truth map. Predictions are logits and are
// upsampled to the mask resolution first. Batch reduction is the mean over
// samples; levels are summed.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "aglnet/model.hpp"
#include "aglnet/ops.hpp"

namespace aglnet::losses {

inline constexpr int kWeightKernel = 31;
inline constexpr double kWeightGain = 5.0;
inline constexpr double kIouSmooth = 1.0;

/// w = 1 + 5 |avgpool_31(gt) - gt|, zero padding counted in the average.
inline Tensor structure_weights(const Tensor& gt) {
  const Shape& s = gt.shape();
  const int r = kWeightKernel / 2;
  const double area = static_cast<double>(kWeightKernel) * kWeightKernel;
  Tensor out(s);
  auto gv = gt.data();
  auto ov = out.data();
  std::vector<double> integral(static_cast<std::size_t>(s.h + 1) * (s.w + 1));
  const int planes = s.n * s.c;
  for (int pl = 0; pl < planes; ++pl) {
    const double* src = gv.data() + static_cast<std::size_t>(pl) * s.plane();
    std::fill(integral.begin(), integral.end(), 0.0);
    for (int y = 0; y < s.h; ++y) {
      double row = 0.0;
      for (int x = 0; x < s.w; ++x) {
        row += src[y * s.w + x];
        integral[(y + 1) * (s.w + 1) + x + 1] = integral[y * (s.w + 1) + x + 1] + row;
      }
    }
    for (int y = 0; y < s.h; ++y) {
      const int y0 = std::max(0, y - r);
      const int y1 = std::min(s.h, y + r + 1);
      for (int x = 0; x < s.w; ++x) {
        const int x0 = std::max(0, x - r);
        const int x1 = std::min(s.w, x + r + 1);
        const double box = integral[y1 * (s.w + 1) + x1] - integral[y0 * (s.w + 1) + x1] -
                           integral[y1 * (s.w + 1) + x0] + integral[y0 * (s.w + 1) + x0];
        ov[static_cast<std::size_t>(pl) * s.plane() + y * s.w + x] =
            1.0 + kWeightGain * std::abs(box / area - src[y * s.w + x]);
      }
    }
  }
  return out;
}

inline void require_single_channel_pair(const Tensor& pred, const Tensor& gt, const char* who) {
  require_same_shape(pred, gt, who);
  if (pred.shape().c != 1) throw ValidationError(std::string(who) + ": expected single-channel maps");
}

/// Σ w·BCE(σ(z), g) / Σ w per sample, averaged over the batch.
inline Tensor weighted_bce(const Tensor& logits, const Tensor& gt, const Tensor& weight) {
  require_single_channel_pair(logits, gt, "weighted_bce");
  require_same_shape(logits, weight, "weighted_bce");
  const Shape& s = logits.shape();
  const std::size_t plane = s.plane();
  auto z = logits.data();
  auto g = gt.data();
  auto w = weight.data();
  std::vector<double> wsum(s.n, 0.0);
  double total = 0.0;
  for (int n = 0; n < s.n; ++n) {
    double num = 0.0;
    for (std::size_t i = n * plane; i < (n + 1) * plane; ++i) {
      const double bce = std::max(z[i], 0.0) - z[i] * g[i] + std::log1p(std::exp(-std::abs(z[i])));
      num += w[i] * bce;
      wsum[n] += w[i];
    }
    total += num / wsum[n];
  }
  total /= s.n;
  return Tensor::make_result({1, 1, 1, 1}, {total}, {logits},
                             [logits, gt, weight, wsum, plane](aglnet::detail::Node& self) mutable {
                               const int batch = logits.shape().n;
                               auto z = logits.data();
                               auto g = gt.data();
                               auto w = weight.data();
                               auto gz = logits.grad();
                               for (int n = 0; n < batch; ++n) {
                                 const double k = self.grad[0] / (wsum[n] * batch);
                                 for (std::size_t i = n * plane; i < (n + 1) * plane; ++i) {
                                   gz[i] += k * w[i] * (ops::sigmoid(z[i]) - g[i]);
                                 }
                               }
                             });
}

/// 1 - (Σ w p g + 1) / (Σ w (p + g - p g) + 1) per sample, averaged.
inline Tensor weighted_iou(const Tensor& logits, const Tensor& gt, const Tensor& weight) {
  require_single_channel_pair(logits, gt, "weighted_iou");
  require_same_shape(logits, weight, "weighted_iou");
  const Shape& s = logits.shape();
  const std::size_t plane = s.plane();
  auto z = logits.data();
  auto g = gt.data();
  auto w = weight.data();
  std::vector<double> inter(s.n, 0.0);
  std::vector<double> uni(s.n, 0.0);
  double total = 0.0;
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t i = n * plane; i < (n + 1) * plane; ++i) {
      const double p = ops::sigmoid(z[i]);
      inter[n] += w[i] * p * g[i];
      uni[n] += w[i] * (p + g[i]);
    }
    total += 1.0 - (inter[n] + kIouSmooth) / (uni[n] - inter[n] + kIouSmooth);
  }
  total /= s.n;
  return Tensor::make_result({1, 1, 1, 1}, {total}, {logits},
                             [logits, gt, weight, inter, uni, plane](aglnet::detail::Node& self) mutable {
                               const int batch = logits.shape().n;
                               auto z = logits.data();
                               auto g = gt.data();
                               auto w = weight.data();
                               auto gz = logits.grad();
                               for (int n = 0; n < batch; ++n) {
                                 const double a = inter[n] + kIouSmooth;
                                 const double b = uni[n] - inter[n] + kIouSmooth;
                                 const double k = self.grad[0] / batch;
                                 for (std::size_t i = n * plane; i < (n + 1) * plane; ++i) {
                                   const double p = ops::sigmoid(z[i]);
                                   const double dl_dp = -(w[i] * g[i] * b - a * w[i] * (1.0 - g[i])) / (b * b);
                                   gz[i] += k * dl_dp * p * (1.0 - p);
                                 }
                               }
                             });
}

/// Mean squared error over every element.
inline Tensor cue_mse(const Tensor& prediction, const Tensor& target) {
  require_single_channel_pair(prediction, target, "cue_mse");
  auto a = prediction.data();
  auto b = target.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
  const double count = static_cast<double>(a.size());
  return Tensor::make_result({1, 1, 1, 1}, {sum / count}, {prediction},
                             [prediction, target, count](aglnet::detail::Node& self) mutable {
                               auto a = prediction.data();
                               auto b = target.data();
                               auto g = prediction.grad();
                               for (std::size_t i = 0; i < a.size(); ++i) g[i] += self.grad[0] * 2.0 * (a[i] - b[i]) / count;
                             });
}

struct LossBreakdown {
  std::array<double, 3> bce_per_level{};  // r_1, r_2, r_3
  std::array<double, 3> iou_per_level{};
  double cue_mse = 0.0;
  double total = 0.0;
};

struct LossResult {
  Tensor total;  // differentiable scalar
  LossBreakdown breakdown;
};

/// Σ_{i=1..3} (BCE(r_i) + IoU(r_i)) + MSE(r^s, D^s). r_4 is not supervised.
/// With `supervise_cue` off (no AIG) the MSE term is zero.
inline LossResult total_loss(const PredictionSet& preds, const Tensor& gt, const Tensor& cue_target,
                             bool supervise_cue = true) {
  const std::array<const Tensor*, 3> levels{&preds.r1, &preds.r2, &preds.r3};
  for (const Tensor* t : levels) {
    if (!t->defined()) throw ValidationError("total_loss: missing prediction level");
  }
  if (supervise_cue && !preds.r_s.defined()) throw ValidationError("total_loss: missing cue prediction");
  const int h = gt.shape().h;
  const int w = gt.shape().w;
  const Tensor weight = structure_weights(gt);
  LossResult result;
  std::vector<Tensor> terms;
  for (std::size_t i = 0; i < 3; ++i) {
    const Tensor full = ops::resize_bilinear(*levels[i], h, w);
    Tensor bce = weighted_bce(full, gt, weight);
    Tensor iou = weighted_iou(full, gt, weight);
    result.breakdown.bce_per_level[i] = bce.item();
    result.breakdown.iou_per_level[i] = iou.item();
    terms.push_back(bce);
    terms.push_back(iou);
  }
  if (supervise_cue) {
    Tensor mse = cue_mse(ops::resize_bilinear(preds.r_s, h, w), cue_target);
    result.breakdown.cue_mse = mse.item();
    terms.push_back(mse);
  }
  result.total = ops::add_n(terms);
  result.breakdown.total = result.total.item();
  return result;
}

}  // namespace aglnet::losses
