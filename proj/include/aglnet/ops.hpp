#pragma once

// Differentiable tensor operations. Each op computes its forward values
// eagerly and, when a gradient is needed, records a closure that maps the
// output gradient back onto its inputs.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "aglnet/tensor.hpp"

namespace aglnet::ops {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// ---------------------------------------------------------------------------
// ReLU kink monitor. Finite-difference checks are only meaningful where the
// function is smooth; tests enable this to measure how close any rectifier
// input came to zero during a forward pass.

namespace detail {
struct KinkMonitor {
  bool enabled = false;
  double min_abs = std::numeric_limits<double>::infinity();
};
inline KinkMonitor& kink_monitor() {
  thread_local KinkMonitor monitor;
  return monitor;
}
}  // namespace detail

class KinkMonitorScope {
 public:
  KinkMonitorScope() {
    auto& m = detail::kink_monitor();
    m.enabled = true;
    m.min_abs = std::numeric_limits<double>::infinity();
  }
  ~KinkMonitorScope() { detail::kink_monitor().enabled = false; }
  KinkMonitorScope(const KinkMonitorScope&) = delete;
  KinkMonitorScope& operator=(const KinkMonitorScope&) = delete;

  [[nodiscard]] double min_abs_input() const { return detail::kink_monitor().min_abs; }
};

// ---------------------------------------------------------------------------
// Element-wise

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](aglnet::detail::Node& self) mutable {
    for (const Tensor* t : {&a, &b}) {
      if (!wants_grad(*t)) continue;
      auto g = t->grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor add_n(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ValidationError("add_n: empty input");
  Tensor acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [a, s](aglnet::detail::Node& self) mutable {
    auto g = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

/// Element-wise product. `b` may also be (N,C,1,1), broadcast over space.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool broadcast = sb != sa;
  if (broadcast && !(sb.n == sa.n && sb.c == sa.c && sb.h == 1 && sb.w == 1)) {
    throw ValidationError("mul: incompatible shapes " + to_string(sa) + " and " + to_string(sb));
  }
  const std::size_t plane = broadcast ? sa.plane() : 1;
  std::vector<double> out(a.numel());
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i / plane];
  return Tensor::make_result(sa, std::move(out), {a, b}, [a, b, plane](aglnet::detail::Node& self) mutable {
    auto av = a.data();
    auto bv = b.data();
    if (wants_grad(a)) {
      auto g = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i / plane];
    }
    if (wants_grad(b)) {
      auto g = b.grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i / plane] += self.grad[i] * av[i];
    }
  });
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto xv = x.data();
  auto& monitor = detail::kink_monitor();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    if (monitor.enabled) monitor.min_abs = std::min(monitor.min_abs, std::abs(xv[i]));
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x](aglnet::detail::Node& self) mutable {
    auto xv = x.data();
    auto g = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

inline Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid(xv[i]);
  auto keep = out;
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x, keep](aglnet::detail::Node& self) mutable {
    auto g = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * keep[i] * (1.0 - keep[i]);
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return Tensor::make_result({1, 1, 1, 1}, {s}, {x}, [x](aglnet::detail::Node& self) mutable {
    auto g = x.grad();
    for (double& gi : g) gi += self.grad[0];
  });
}

/// Σ coeffs ⊙ x against a constant coefficient tensor.
inline Tensor dot_constant(const Tensor& x, std::span<const double> coeffs) {
  if (coeffs.size() != x.numel()) throw ValidationError("dot_constant: size mismatch");
  double s = 0.0;
  auto xv = x.data();
  for (std::size_t i = 0; i < coeffs.size(); ++i) s += coeffs[i] * xv[i];
  std::vector<double> c(coeffs.begin(), coeffs.end());
  return Tensor::make_result({1, 1, 1, 1}, {s}, {x}, [x, c](aglnet::detail::Node& self) mutable {
    auto g = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * c[i];
  });
}

// ---------------------------------------------------------------------------
// Channel plumbing

inline Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ValidationError("concat_channels: empty input");
  const Shape first = xs.front().shape();
  int channels = 0;
  for (const auto& t : xs) {
    const Shape& s = t.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ValidationError("concat_channels: spatial/batch mismatch " + to_string(first) + " vs " +
                            to_string(s));
    }
    channels += s.c;
  }
  const Shape out_shape{first.n, channels, first.h, first.w};
  const std::size_t plane = first.plane();
  std::vector<double> out(out_shape.numel());
  for (int n = 0; n < first.n; ++n) {
    std::size_t offset = static_cast<std::size_t>(n) * channels * plane;
    for (const auto& t : xs) {
      const std::size_t block = static_cast<std::size_t>(t.shape().c) * plane;
      auto src = t.data().subspan(static_cast<std::size_t>(n) * block, block);
      std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += block;
    }
  }
  return Tensor::make_result(out_shape, std::move(out), xs, [xs, channels, plane](aglnet::detail::Node& self) mutable {
    const int batch = self.shape.n;
    for (int n = 0; n < batch; ++n) {
      std::size_t offset = static_cast<std::size_t>(n) * channels * plane;
      for (const auto& t : xs) {
        const std::size_t block = static_cast<std::size_t>(t.shape().c) * plane;
        if (wants_grad(t)) {
          auto g = t.grad();
          for (std::size_t i = 0; i < block; ++i) g[n * block + i] += self.grad[offset + i];
        }
        offset += block;
      }
    }
  });
}

inline Tensor slice_channels(const Tensor& x, int start, int count) {
  const Shape& s = x.shape();
  if (start < 0 || count <= 0 || start + count > s.c) {
    throw ValidationError("slice_channels: range [" + std::to_string(start) + "," +
                          std::to_string(start + count) + ") outside " + std::to_string(s.c) + " channels");
  }
  const Shape out_shape{s.n, count, s.h, s.w};
  const std::size_t plane = s.plane();
  std::vector<double> out(out_shape.numel());
  auto xv = x.data();
  for (int n = 0; n < s.n; ++n) {
    const std::size_t src = (static_cast<std::size_t>(n) * s.c + start) * plane;
    const std::size_t dst = static_cast<std::size_t>(n) * count * plane;
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(src), count * plane,
                out.begin() + static_cast<std::ptrdiff_t>(dst));
  }
  return Tensor::make_result(out_shape, std::move(out), {x}, [x, start, count, plane](aglnet::detail::Node& self) mutable {
    const Shape& s = x.shape();
    auto g = x.grad();
    for (int n = 0; n < s.n; ++n) {
      const std::size_t src = (static_cast<std::size_t>(n) * s.c + start) * plane;
      const std::size_t dst = static_cast<std::size_t>(n) * count * plane;
      for (std::size_t i = 0; i < count * plane; ++i) g[src + i] += self.grad[dst + i];
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution (square kernel, zero padding) lowered to GEMM through im2col.

namespace detail {

inline void im2col(const double* img, int channels, int h, int w, int k, int stride, int pad,
                   int out_h, int out_w, double* cols) {
  const std::size_t p = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * p;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[oy * out_w + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                       ? img[(static_cast<std::size_t>(c) * h + iy) * w + ix]
                                       : 0.0;
          }
        }
      }
    }
  }
}

inline void col2im(const double* cols, int channels, int h, int w, int k, int stride, int pad,
                   int out_h, int out_w, double* img) {
  const std::size_t p = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * p;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            img[(static_cast<std::size_t>(c) * h + iy) * w + ix] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// x: (N,Cin,H,W), weight: (Cout,Cin,k,k), bias: (1,Cout,1,1) or undefined.
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int pad) {
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sw.c != sx.c || sw.h != sw.w) {
    throw ValidationError("conv2d: weight " + to_string(sw) + " incompatible with input " + to_string(sx));
  }
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(sw.n)) {
    throw ValidationError("conv2d: bias size does not match output channels");
  }
  const int k = sw.h;
  const int out_h = (sx.h + 2 * pad - k) / stride + 1;
  const int out_w = (sx.w + 2 * pad - k) / stride + 1;
  if (out_h <= 0 || out_w <= 0) throw ValidationError("conv2d: input too small for kernel");
  const int kdim = sx.c * k * k;
  const std::size_t p = static_cast<std::size_t>(out_h) * out_w;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  const Shape out_shape{sx.n, sw.n, out_h, out_w};
  std::vector<double> out(out_shape.numel());
  std::vector<double> cols(direct ? 0 : static_cast<std::size_t>(kdim) * p * sx.n);
  ConstMatrixMap wmat(weight.data().data(), sw.n, kdim);
  for (int n = 0; n < sx.n; ++n) {
    const double* img = x.data().data() + static_cast<std::size_t>(n) * sx.c * sx.plane();
    const double* colp = img;
    if (!direct) {
      double* dst = cols.data() + static_cast<std::size_t>(n) * kdim * p;
      detail::im2col(img, sx.c, sx.h, sx.w, k, stride, pad, out_h, out_w, dst);
      colp = dst;
    }
    MatrixMap omat(out.data() + static_cast<std::size_t>(n) * sw.n * p, sw.n, static_cast<Eigen::Index>(p));
    omat.noalias() = wmat * ConstMatrixMap(colp, kdim, static_cast<Eigen::Index>(p));
    if (bias.defined()) {
      auto bv = bias.data();
      for (int o = 0; o < sw.n; ++o) omat.row(o).array() += bv[o];
    }
  }
  return Tensor::make_result(
      out_shape, std::move(out), {x, weight, bias},
      [x, weight, bias, cols = std::move(cols), k, stride, pad, out_h, out_w, kdim, p, direct](
          aglnet::detail::Node& self) mutable {
        const Shape& sx = x.shape();
        const Shape& sw = weight.shape();
        ConstMatrixMap wmat(weight.data().data(), sw.n, kdim);
        std::vector<double> dcols(static_cast<std::size_t>(kdim) * p);
        for (int n = 0; n < sx.n; ++n) {
          ConstMatrixMap gout(self.grad.data() + static_cast<std::size_t>(n) * sw.n * p, sw.n,
                              static_cast<Eigen::Index>(p));
          const double* colp = direct ? x.data().data() + static_cast<std::size_t>(n) * sx.c * sx.plane()
                                      : cols.data() + static_cast<std::size_t>(n) * kdim * p;
          if (wants_grad(weight)) {
            MatrixMap gw(weight.grad().data(), sw.n, kdim);
            gw.noalias() += gout * ConstMatrixMap(colp, kdim, static_cast<Eigen::Index>(p)).transpose();
          }
          if (wants_grad(bias)) {
            auto gb = bias.grad();
            for (int o = 0; o < sw.n; ++o) gb[o] += gout.row(o).sum();
          }
          if (wants_grad(x)) {
            double* gx = x.grad().data() + static_cast<std::size_t>(n) * sx.c * sx.plane();
            if (direct) {
              MatrixMap(gx, kdim, static_cast<Eigen::Index>(p)).noalias() += wmat.transpose() * gout;
            } else {
              MatrixMap dc(dcols.data(), kdim, static_cast<Eigen::Index>(p));
              dc.noalias() = wmat.transpose() * gout;
              detail::col2im(dcols.data(), sx.c, sx.h, sx.w, k, stride, pad, out_h, out_w, gx);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Group normalization with per-channel affine parameters (1,C,1,1).

inline Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups,
                         double eps = 1e-5) {
  const Shape& s = x.shape();
  if (groups <= 0 || s.c % groups != 0) {
    throw ValidationError("group_norm: " + std::to_string(s.c) + " channels not divisible into " +
                          std::to_string(groups) + " groups");
  }
  const int cpg = s.c / groups;
  const std::size_t plane = s.plane();
  const std::size_t m = static_cast<std::size_t>(cpg) * plane;
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(static_cast<std::size_t>(s.n) * groups);
  std::vector<double> out(x.numel());
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  for (int n = 0; n < s.n; ++n) {
    for (int g = 0; g < groups; ++g) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + static_cast<std::size_t>(g) * cpg) * plane;
      double mean = 0.0;
      for (std::size_t i = 0; i < m; ++i) mean += xv[base + i];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double d = xv[base + i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(m);
      const double inv = 1.0 / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(n) * groups + g] = inv;
      for (std::size_t i = 0; i < m; ++i) {
        const int c = g * cpg + static_cast<int>(i / plane);
        xhat[base + i] = (xv[base + i] - mean) * inv;
        out[base + i] = xhat[base + i] * gv[c] + bv[c];
      }
    }
  }
  return Tensor::make_result(
      s, std::move(out), {x, gamma, beta},
      [x, gamma, beta, groups, cpg, plane, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          aglnet::detail::Node& self) mutable {
        const Shape& s = x.shape();
        auto gv = gamma.data();
        for (int n = 0; n < s.n; ++n) {
          for (int g = 0; g < groups; ++g) {
            const std::size_t base =
                (static_cast<std::size_t>(n) * s.c + static_cast<std::size_t>(g) * cpg) * plane;
            if (wants_grad(gamma) || wants_grad(beta)) {
              for (std::size_t i = 0; i < m; ++i) {
                const int c = g * cpg + static_cast<int>(i / plane);
                if (wants_grad(gamma)) gamma.grad()[c] += self.grad[base + i] * xhat[base + i];
                if (wants_grad(beta)) beta.grad()[c] += self.grad[base + i];
              }
            }
            if (!wants_grad(x)) continue;
            double sum_d = 0.0;
            double sum_dx = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
              const int c = g * cpg + static_cast<int>(i / plane);
              const double d = self.grad[base + i] * gv[c];
              sum_d += d;
              sum_dx += d * xhat[base + i];
            }
            const double inv = inv_std[static_cast<std::size_t>(n) * groups + g];
            const double md = static_cast<double>(m);
            auto gx = x.grad();
            for (std::size_t i = 0; i < m; ++i) {
              const int c = g * cpg + static_cast<int>(i / plane);
              const double d = self.grad[base + i] * gv[c];
              gx[base + i] += inv / md * (md * d - sum_d - xhat[base + i] * sum_dx);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Spatial resampling

namespace detail {

struct LinearTaps {
  std::vector<int> i0;
  std::vector<int> i1;
  std::vector<double> w1;  // weight of i1; i0 gets 1 - w1
};

/// Half-pixel-centre bilinear taps (the align_corners=false convention).
inline LinearTaps linear_taps(int in, int out) {
  LinearTaps t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w1.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (int o = 0; o < out; ++o) {
    double src = ratio * (o + 0.5) - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(src);
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = i0 < in - 1 ? i0 + 1 : i0;
    t.i0[o] = i0;
    t.i1[o] = i1;
    t.w1[o] = src - i0;
  }
  return t;
}

}  // namespace detail

inline Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
  const Shape& s = x.shape();
  if (out_h <= 0 || out_w <= 0) throw ValidationError("resize_bilinear: non-positive target size");
  if (out_h == s.h && out_w == s.w) return x;
  const auto ty = detail::linear_taps(s.h, out_h);
  const auto tx = detail::linear_taps(s.w, out_w);
  const Shape out_shape{s.n, s.c, out_h, out_w};
  std::vector<double> out(out_shape.numel());
  auto xv = x.data();
  const int planes = s.n * s.c;
  for (int pl = 0; pl < planes; ++pl) {
    const double* src = xv.data() + static_cast<std::size_t>(pl) * s.plane();
    double* dst = out.data() + static_cast<std::size_t>(pl) * out_shape.plane();
    for (int y = 0; y < out_h; ++y) {
      const double wy1 = ty.w1[y];
      const double* r0 = src + static_cast<std::size_t>(ty.i0[y]) * s.w;
      const double* r1 = src + static_cast<std::size_t>(ty.i1[y]) * s.w;
      for (int xo = 0; xo < out_w; ++xo) {
        const double wx1 = tx.w1[xo];
        const double top = r0[tx.i0[xo]] * (1.0 - wx1) + r0[tx.i1[xo]] * wx1;
        const double bot = r1[tx.i0[xo]] * (1.0 - wx1) + r1[tx.i1[xo]] * wx1;
        dst[y * out_w + xo] = top * (1.0 - wy1) + bot * wy1;
      }
    }
  }
  return Tensor::make_result(out_shape, std::move(out), {x}, [x, ty, tx, out_h, out_w](aglnet::detail::Node& self) mutable {
    const Shape& s = x.shape();
    auto g = x.grad();
    const int planes = s.n * s.c;
    for (int pl = 0; pl < planes; ++pl) {
      double* dst = g.data() + static_cast<std::size_t>(pl) * s.plane();
      const double* go = self.grad.data() + static_cast<std::size_t>(pl) * out_h * out_w;
      for (int y = 0; y < out_h; ++y) {
        const double wy1 = ty.w1[y];
        double* r0 = dst + static_cast<std::size_t>(ty.i0[y]) * s.w;
        double* r1 = dst + static_cast<std::size_t>(ty.i1[y]) * s.w;
        for (int xo = 0; xo < out_w; ++xo) {
          const double gv = go[y * out_w + xo];
          const double wx1 = tx.w1[xo];
          r0[tx.i0[xo]] += gv * (1.0 - wy1) * (1.0 - wx1);
          r0[tx.i1[xo]] += gv * (1.0 - wy1) * wx1;
          r1[tx.i0[xo]] += gv * wy1 * (1.0 - wx1);
          r1[tx.i1[xo]] += gv * wy1 * wx1;
        }
      }
    }
  });
}

inline Tensor upsample(const Tensor& x, int factor) {
  if (factor < 1) throw ValidationError("upsample: factor must be >= 1");
  return resize_bilinear(x, x.shape().h * factor, x.shape().w * factor);
}

inline Tensor downsample(const Tensor& x, int factor) {
  if (factor < 1) throw ValidationError("downsample: factor must be >= 1");
  if (x.shape().h % factor != 0 || x.shape().w % factor != 0) {
    throw ValidationError("downsample: spatial size " + std::to_string(x.shape().h) + "x" +
                          std::to_string(x.shape().w) + " not divisible by " + std::to_string(factor));
  }
  return resize_bilinear(x, x.shape().h / factor, x.shape().w / factor);
}

/// 2x2 average pooling with stride 2.
inline Tensor avg_pool2(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ValidationError("avg_pool2: odd spatial size " + to_string(s));
  }
  const Shape out_shape{s.n, s.c, s.h / 2, s.w / 2};
  std::vector<double> out(out_shape.numel());
  auto xv = x.data();
  const int planes = s.n * s.c;
  for (int pl = 0; pl < planes; ++pl) {
    const double* src = xv.data() + static_cast<std::size_t>(pl) * s.plane();
    double* dst = out.data() + static_cast<std::size_t>(pl) * out_shape.plane();
    for (int y = 0; y < out_shape.h; ++y) {
      for (int xo = 0; xo < out_shape.w; ++xo) {
        const double* p = src + static_cast<std::size_t>(2 * y) * s.w + 2 * xo;
        dst[y * out_shape.w + xo] = 0.25 * (p[0] + p[1] + p[s.w] + p[s.w + 1]);
      }
    }
  }
  return Tensor::make_result(out_shape, std::move(out), {x}, [x, out_shape](aglnet::detail::Node& self) mutable {
    const Shape& s = x.shape();
    auto g = x.grad();
    const int planes = s.n * s.c;
    for (int pl = 0; pl < planes; ++pl) {
      double* dst = g.data() + static_cast<std::size_t>(pl) * s.plane();
      const double* go = self.grad.data() + static_cast<std::size_t>(pl) * out_shape.plane();
      for (int y = 0; y < out_shape.h; ++y) {
        for (int xo = 0; xo < out_shape.w; ++xo) {
          const double v = 0.25 * go[y * out_shape.w + xo];
          double* p = dst + static_cast<std::size_t>(2 * y) * s.w + 2 * xo;
          p[0] += v;
          p[1] += v;
          p[s.w] += v;
          p[s.w + 1] += v;
        }
      }
    }
  });
}

inline Tensor global_avg_pool(const Tensor& x) {
  const Shape& s = x.shape();
  const Shape out_shape{s.n, s.c, 1, 1};
  const std::size_t plane = s.plane();
  std::vector<double> out(out_shape.numel());
  auto xv = x.data();
  for (std::size_t pl = 0; pl < out.size(); ++pl) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += xv[pl * plane + i];
    out[pl] = acc / static_cast<double>(plane);
  }
  return Tensor::make_result(out_shape, std::move(out), {x}, [x, plane](aglnet::detail::Node& self) mutable {
    auto g = x.grad();
    for (std::size_t pl = 0; pl < self.grad.size(); ++pl) {
      const double v = self.grad[pl] / static_cast<double>(plane);
      for (std::size_t i = 0; i < plane; ++i) g[pl * plane + i] += v;
    }
  });
}

/// Softmax over the channel axis of an (N,C,1,1) tensor.
inline Tensor softmax_channels(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.h != 1 || s.w != 1) throw ValidationError("softmax_channels: expects (N,C,1,1), got " + to_string(s));
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (int n = 0; n < s.n; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * s.c;
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < s.c; ++c) mx = std::max(mx, xv[base + c]);
    double z = 0.0;
    for (int c = 0; c < s.c; ++c) {
      out[base + c] = std::exp(xv[base + c] - mx);
      z += out[base + c];
    }
    for (int c = 0; c < s.c; ++c) out[base + c] /= z;
  }
  auto keep = out;
  return Tensor::make_result(s, std::move(out), {x}, [x, keep](aglnet::detail::Node& self) mutable {
    const Shape& s = x.shape();
    auto g = x.grad();
    for (int n = 0; n < s.n; ++n) {
      const std::size_t base = static_cast<std::size_t>(n) * s.c;
      double dot = 0.0;
      for (int c = 0; c < s.c; ++c) dot += self.grad[base + c] * keep[base + c];
      for (int c = 0; c < s.c; ++c) g[base + c] += keep[base + c] * (self.grad[base + c] - dot);
    }
  });
}

}  // namespace aglnet::ops
