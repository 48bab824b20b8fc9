#pragma once

// Camouflaged/salient object detection metrics on a single prediction map:
// structure measure S_alpha, weighted F-measure, F-measure and E-measure over
// 256 thresholds, and MAE. Predictions are min-max normalized first unless
// constant; ground truth is binary.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "aglnet/image.hpp"

namespace aglnet::metrics {

inline constexpr double kEps = std::numeric_limits<double>::epsilon();
inline constexpr int kThresholds = 256;

inline void require_aligned(const Plane& pred, const BinaryMask& gt, const char* who) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) {
    throw ValidationError(std::string(who) + ": prediction and ground truth differ in size");
  }
  if (pred.size() == 0) throw ValidationError(std::string(who) + ": empty map");
  for (double v : pred.values()) {
    if (!std::isfinite(v)) throw ValidationError(std::string(who) + ": non-finite prediction");
  }
}

/// (p - min) / (max - min), left unchanged when constant.
inline Plane normalize_prediction(const Plane& pred) {
  const auto [lo, hi] = std::minmax_element(pred.values().begin(), pred.values().end());
  if (lo == pred.values().end() || *hi == *lo) return pred;
  Plane out(pred.height(), pred.width());
  const double l = *lo;
  const double range = *hi - *lo;
  for (std::size_t i = 0; i < pred.size(); ++i) out[i] = (pred[i] - l) / range;
  return out;
}

// ---------------------------------------------------------------------------
// MAE

inline double mae(const Plane& pred, const BinaryMask& gt) {
  require_aligned(pred, gt, "mae");
  const Plane p = normalize_prediction(pred);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - gt[i]);
  return s / static_cast<double>(p.size());
}

// ---------------------------------------------------------------------------
// S-measure

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation; zero below two samples.
inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline double s_object(const Plane& values, const BinaryMask& region, bool on) {
  std::vector<double> sel;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if ((region[i] != 0) == on) sel.push_back(values[i]);
  }
  const double x = mean_of(sel);
  return 2.0 * x / (x * x + 1.0 + sample_std(sel) + kEps);
}

inline double object_score(const Plane& pred, const BinaryMask& gt) {
  Plane fg(pred.height(), pred.width());
  Plane bg(pred.height(), pred.width());
  double u = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    fg[i] = pred[i] * gt[i];
    bg[i] = (1.0 - pred[i]) * (1 - gt[i]);
    u += gt[i];
  }
  u /= static_cast<double>(pred.size());
  return u * s_object(fg, gt, true) + (1.0 - u) * s_object(bg, gt, false);
}

/// 1-based split point (x, y): the rounded (half-to-even) foreground centroid
/// plus one, or the image centre when there is no foreground.
inline std::pair<int, int> centroid(const BinaryMask& gt) {
  double sx = 0.0;
  double sy = 0.0;
  std::size_t count = 0;
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      if (gt(y, x)) {
        sx += x;
        sy += y;
        ++count;
      }
    }
  }
  if (count == 0) {
    return {static_cast<int>(std::nearbyint(gt.width() / 2.0)) + 1, static_cast<int>(std::nearbyint(gt.height() / 2.0)) + 1};
  }
  return {static_cast<int>(std::nearbyint(sx / static_cast<double>(count))) + 1,
          static_cast<int>(std::nearbyint(sy / static_cast<double>(count))) + 1};
}

inline double region_ssim(const Plane& pred, const BinaryMask& gt, int y0, int y1, int x0, int x1) {
  const int n = (y1 - y0) * (x1 - x0);
  if (n <= 0) return 0.0;
  double mx = 0.0;
  double my = 0.0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      mx += pred(y, x);
      my += gt(y, x);
    }
  }
  mx /= n;
  my /= n;
  double vx = 0.0;
  double vy = 0.0;
  double cxy = 0.0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const double dx = pred(y, x) - mx;
      const double dy = gt(y, x) - my;
      vx += dx * dx;
      vy += dy * dy;
      cxy += dx * dy;
    }
  }
  const double denom = n > 1 ? n - 1.0 : 1.0;
  vx /= denom;
  vy /= denom;
  cxy /= denom;
  const double alpha = 4.0 * mx * my * cxy;
  const double beta = (mx * mx + my * my) * (vx + vy);
  if (alpha != 0.0) return alpha / (beta + kEps);
  return beta == 0.0 ? 1.0 : 0.0;
}

inline double region_score(const Plane& pred, const BinaryMask& gt) {
  const int h = gt.height();
  const int w = gt.width();
  auto [x, y] = centroid(gt);
  x = std::min(x, w);
  y = std::min(y, h);
  const double area = static_cast<double>(h) * w;
  const double w1 = static_cast<double>(x) * y / area;
  const double w2 = static_cast<double>(y) * (w - x) / area;
  const double w3 = static_cast<double>(h - y) * x / area;
  const double w4 = 1.0 - w1 - w2 - w3;
  return w1 * region_ssim(pred, gt, 0, y, 0, x) + w2 * region_ssim(pred, gt, 0, y, x, w) +
         w3 * region_ssim(pred, gt, y, h, 0, x) + w4 * region_ssim(pred, gt, y, h, x, w);
}

}  // namespace detail

inline double s_measure(const Plane& pred, const BinaryMask& gt, double alpha = 0.5) {
  require_aligned(pred, gt, "s_measure");
  const Plane p = normalize_prediction(pred);
  const double y = static_cast<double>(gt.count()) / static_cast<double>(gt.size());
  const double mp = std::accumulate(p.values().begin(), p.values().end(), 0.0) / static_cast<double>(p.size());
  if (y == 0.0) return 1.0 - mp;
  if (y == 1.0) return mp;
  const double s = alpha * detail::object_score(p, gt) + (1.0 - alpha) * detail::region_score(p, gt);
  return std::max(0.0, s);
}

// ---------------------------------------------------------------------------
// Weighted F-measure

/// Euclidean feature transform: for every pixel, the coordinates of the
/// nearest pixel where `feature` is set, resolving ties the same way as the
/// separable Voronoi algorithm (axis 0 then axis 1). Pixels with no feature
/// anywhere get (-1, -1).
struct FeatureTransform {
  Grid<int> nearest_y;
  Grid<int> nearest_x;
  Plane distance;
};

namespace detail {

// One 1-D Voronoi pass along axis `d` of a line whose other coordinate is
// `other`. f holds (y, x) features per element, -1 when absent.
inline void voronoi_line(std::vector<std::array<int, 2>>& f, int d, int other) {
  const int len = static_cast<int>(f.size());
  const int o = 1 - d;
  std::vector<int> g(len);
  int l = -1;
  const std::vector<std::array<int, 2>> src = f;
  for (int i = 0; i < len; ++i) {
    if (src[i][0] < 0) continue;
    const double fd = src[i][d];
    const double tw = src[i][o] - other;
    const double wr = tw * tw;
    while (l >= 1) {
      const auto& f1 = src[g[l]];
      const auto& f2 = src[g[l - 1]];
      const double a = f1[d] - f2[d];
      const double b = fd - f1[d];
      const double c = a + b;
      const double tu = f2[o] - other;
      const double tv = f1[o] - other;
      const double ur = tu * tu;
      const double vr = tv * tv;
      if (c * vr - b * ur - a * wr - a * b * c <= 0.0) break;
      --l;
    }
    g[++l] = i;
  }
  const int maxl = l;
  if (maxl < 0) return;
  auto dist2 = [&](int idx, int i) {
    const double t0 = src[idx][d] - i;
    const double t1 = src[idx][o] - other;
    return t0 * t0 + t1 * t1;
  };
  l = 0;
  for (int i = 0; i < len; ++i) {
    double d1 = dist2(g[l], i);
    while (l < maxl) {
      const double d2 = dist2(g[l + 1], i);
      if (d1 <= d2) break;
      d1 = d2;
      ++l;
    }
    f[i] = src[g[l]];
  }
}

}  // namespace detail

inline FeatureTransform feature_transform(const BinaryMask& feature) {
  const int h = feature.height();
  const int w = feature.width();
  Grid<std::array<int, 2>> ft(h, w, {-1, -1});
  std::vector<std::array<int, 2>> line;
  line.resize(h);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) line[y] = feature(y, x) ? std::array<int, 2>{y, x} : std::array<int, 2>{-1, -1};
    detail::voronoi_line(line, 0, x);
    for (int y = 0; y < h; ++y) ft(y, x) = line[y];
  }
  line.resize(w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) line[x] = ft(y, x);
    detail::voronoi_line(line, 1, y);
    for (int x = 0; x < w; ++x) ft(y, x) = line[x];
  }
  FeatureTransform out{Grid<int>(h, w), Grid<int>(h, w), Plane(h, w)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto [fy, fx] = ft(y, x);
      out.nearest_y(y, x) = fy;
      out.nearest_x(y, x) = fx;
      out.distance(y, x) = fy < 0 ? 0.0 : std::hypot(static_cast<double>(fy - y), static_cast<double>(fx - x));
    }
  }
  return out;
}

/// Normalized 7x7 Gaussian with sigma 5.
inline std::array<std::array<double, 7>, 7> dependency_kernel() {
  std::array<std::array<double, 7>, 7> k{};
  double sum = 0.0;
  for (int i = 0; i < 7; ++i) {
    for (int j = 0; j < 7; ++j) sum += k[i][j] = std::exp(-((i - 3.0) * (i - 3.0) + (j - 3.0) * (j - 3.0)) / 50.0);
  }
  for (auto& row : k) {
    for (double& v : row) v /= sum;
  }
  return k;
}

inline double weighted_f(const Plane& pred, const BinaryMask& gt, double beta = 1.0) {
  require_aligned(pred, gt, "weighted_f");
  if (gt.count() == 0) return 0.0;
  const Plane p = normalize_prediction(pred);
  const int h = gt.height();
  const int w = gt.width();
  const FeatureTransform ft = feature_transform(gt);

  Plane e(h, w);
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = std::abs(p[i] - gt[i]);
  Plane et = e;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!gt(y, x)) et(y, x) = e(ft.nearest_y(y, x), ft.nearest_x(y, x));
    }
  }
  const auto k = dependency_kernel();
  Plane ea(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -3; i <= 3; ++i) {
        for (int j = -3; j <= 3; ++j) {
          const int yy = y + i;
          const int xx = x + j;
          if (yy >= 0 && yy < h && xx >= 0 && xx < w) acc += k[i + 3][j + 3] * et(yy, xx);
        }
      }
      ea(y, x) = acc;
    }
  }
  double tp_w = 0.0;
  double fp_w = 0.0;
  double fg_err = 0.0;
  const double fg = static_cast<double>(gt.count());
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double m = (gt[i] && ea[i] < e[i]) ? ea[i] : e[i];
    const double importance = gt[i] ? 1.0 : 2.0 - std::exp(std::log(0.5) / 5.0 * ft.distance[i]);
    const double ew = m * importance;
    if (gt[i]) {
      fg_err += ew;
    } else {
      fp_w += ew;
    }
  }
  tp_w = fg - fg_err;
  const double recall = 1.0 - fg_err / fg;
  const double precision = tp_w / (tp_w + fp_w + kEps);
  return (1.0 + beta * beta) * recall * precision / (recall + beta * beta * precision + kEps);
}

// ---------------------------------------------------------------------------
// Threshold sweeps

/// Counts of foreground/background pixels predicted positive at each
/// threshold; index i corresponds to floor(255 p) >= 255 - i.
struct ThresholdCounts {
  std::array<double, kThresholds> fg_pos{};
  std::array<double, kThresholds> bg_pos{};
};

inline ThresholdCounts threshold_counts(const Plane& p, const BinaryMask& gt) {
  std::array<double, kThresholds> fg_hist{};
  std::array<double, kThresholds> bg_hist{};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const int bin = std::clamp(static_cast<int>(p[i] * 255.0), 0, 255);
    (gt[i] ? fg_hist : bg_hist)[bin] += 1.0;
  }
  ThresholdCounts c;
  double fg = 0.0;
  double bg = 0.0;
  for (int i = 0; i < kThresholds; ++i) {
    fg += fg_hist[255 - i];
    bg += bg_hist[255 - i];
    c.fg_pos[i] = fg;
    c.bg_pos[i] = bg;
  }
  return c;
}

/// F-measure (beta^2 = 0.3) at each of the 256 thresholds.
inline std::array<double, kThresholds> f_curve(const Plane& pred, const BinaryMask& gt, double beta2 = 0.3) {
  require_aligned(pred, gt, "f_measure");
  const Plane p = normalize_prediction(pred);
  const ThresholdCounts c = threshold_counts(p, gt);
  const double t = std::max<double>(static_cast<double>(gt.count()), 1.0);
  std::array<double, kThresholds> f{};
  for (int i = 0; i < kThresholds; ++i) {
    const double tp = c.fg_pos[i];
    double positives = c.fg_pos[i] + c.bg_pos[i];
    if (positives == 0.0) positives = 1.0;
    const double precision = tp / positives;
    const double recall = tp / t;
    const double num = (1.0 + beta2) * precision * recall;
    f[i] = num == 0.0 ? 0.0 : num / (beta2 * precision + recall);
  }
  return f;
}

/// E-measure at each of the 256 thresholds, normalized by the pixel count.
inline std::array<double, kThresholds> e_curve(const Plane& pred, const BinaryMask& gt) {
  require_aligned(pred, gt, "e_measure");
  const Plane p = normalize_prediction(pred);
  const ThresholdCounts c = threshold_counts(p, gt);
  const double n = static_cast<double>(gt.size());
  const double gt_fg = static_cast<double>(gt.count());
  std::array<double, kThresholds> e{};
  for (int i = 0; i < kThresholds; ++i) {
    const double pred_fg = c.fg_pos[i] + c.bg_pos[i];
    const double pred_bg = n - pred_fg;
    double sum = 0.0;
    if (gt_fg == 0.0) {
      sum = pred_bg;
    } else if (gt_fg == n) {
      sum = pred_fg;
    } else {
      const double fg_fg = c.fg_pos[i];
      const double fg_bg = c.bg_pos[i];
      const double bg_fg = gt_fg - fg_fg;
      const double bg_bg = pred_bg - bg_fg;
      const double mp = pred_fg / n;
      const double mg = gt_fg / n;
      const std::array<double, 4> parts{fg_fg, fg_bg, bg_fg, bg_bg};
      const std::array<std::pair<double, double>, 4> combos{
          std::pair{1.0 - mp, 1.0 - mg}, std::pair{1.0 - mp, -mg}, std::pair{-mp, 1.0 - mg}, std::pair{-mp, -mg}};
      for (int k = 0; k < 4; ++k) {
        const auto [a, b] = combos[k];
        const double align = 2.0 * a * b / (a * a + b * b + kEps);
        sum += (align + 1.0) * (align + 1.0) / 4.0 * parts[k];
      }
    }
    e[i] = sum / n;
  }
  return e;
}

inline double curve_mean(const std::array<double, kThresholds>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / kThresholds;
}

inline double curve_max(const std::array<double, kThresholds>& v) { return *std::max_element(v.begin(), v.end()); }

inline double mean_f(const Plane& pred, const BinaryMask& gt) { return curve_mean(f_curve(pred, gt)); }
inline double mean_e(const Plane& pred, const BinaryMask& gt) { return curve_mean(e_curve(pred, gt)); }

// ---------------------------------------------------------------------------
// Reports

struct ImageScores {
  std::string image;
  double s_alpha = 0.0;
  double f_beta_w = 0.0;
  double f_mean = 0.0;
  double e_mean = 0.0;
  double mae = 0.0;
  double f_max = 0.0;
  double e_max = 0.0;
};

inline ImageScores evaluate(const Plane& pred, const BinaryMask& gt, std::string name = {}) {
  ImageScores s;
  s.image = std::move(name);
  s.s_alpha = s_measure(pred, gt);
  s.f_beta_w = weighted_f(pred, gt);
  const auto f = f_curve(pred, gt);
  const auto e = e_curve(pred, gt);
  s.f_mean = curve_mean(f);
  s.f_max = curve_max(f);
  s.e_mean = curve_mean(e);
  s.e_max = curve_max(e);
  s.mae = mae(pred, gt);
  return s;
}

struct MetricReport {
  std::vector<ImageScores> images;

  [[nodiscard]] ImageScores mean() const {
    ImageScores m;
    m.image = "MEAN";
    if (images.empty()) return m;
    for (const auto& s : images) {
      m.s_alpha += s.s_alpha;
      m.f_beta_w += s.f_beta_w;
      m.f_mean += s.f_mean;
      m.e_mean += s.e_mean;
      m.mae += s.mae;
      m.f_max += s.f_max;
      m.e_max += s.e_max;
    }
    const double n = static_cast<double>(images.size());
    m.s_alpha /= n;
    m.f_beta_w /= n;
    m.f_mean /= n;
    m.e_mean /= n;
    m.mae /= n;
    m.f_max /= n;
    m.e_max /= n;
    return m;
  }
};

}  // namespace aglnet::metrics
