#pragma once

// Ground-truth maps for the additional cue: object boundary, Canny edges
// inside the object, texture (boundary plus interior edges) and a blockwise
// DCT frequency map.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "aglnet/image.hpp"

namespace aglnet {

enum class CueKind { kBoundary, kTexture, kCanny, kFrequency };
enum class CueSource { kMaskDerived, kImageDerived };

inline constexpr std::array<CueKind, 4> kAllCueKinds{CueKind::kBoundary, CueKind::kTexture, CueKind::kCanny,
                                                     CueKind::kFrequency};

inline std::string_view cue_kind_name(CueKind k) {
  switch (k) {
    case CueKind::kBoundary: return "boundary";
    case CueKind::kTexture: return "texture";
    case CueKind::kCanny: return "canny";
    case CueKind::kFrequency: return "frequency";
  }
  return "?";
}

inline CueKind parse_cue_kind(std::string_view name) {
  for (CueKind k : kAllCueKinds) {
    if (cue_kind_name(k) == name) return k;
  }
  throw ValidationError("unknown cue kind '" + std::string(name) + "'");
}

inline CueSource cue_source(CueKind k) {
  return k == CueKind::kBoundary ? CueSource::kMaskDerived : CueSource::kImageDerived;
}

struct CueMap {
  Plane data;
  CueKind kind = CueKind::kBoundary;
  CueSource source = CueSource::kMaskDerived;

  [[nodiscard]] int height() const { return data.height(); }
  [[nodiscard]] int width() const { return data.width(); }
};

inline void require_aligned(const BinaryMask& mask, int h, int w, const char* who) {
  if (mask.height() != h || mask.width() != w) {
    throw ValidationError(std::string(who) + ": mask " + std::to_string(mask.height()) + "x" +
                          std::to_string(mask.width()) + " does not match image " + std::to_string(h) + "x" +
                          std::to_string(w));
  }
}

// ---------------------------------------------------------------------------
// Morphology

/// Square (Chebyshev) structuring element of radius t; out-of-image pixels
/// are ignored and the frame never erodes the mask.
inline BinaryMask erode(const BinaryMask& mask, int t) {
  const int h = mask.height();
  const int w = mask.width();
  // Separable min: rows then columns.
  Grid<std::uint8_t> rows(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = 1;
      for (int dx = std::max(0, x - t); dx <= std::min(w - 1, x + t) && v; ++dx) v = mask(y, dx);
      rows(y, x) = v;
    }
  }
  Grid<std::uint8_t> out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = 1;
      for (int dy = std::max(0, y - t); dy <= std::min(h - 1, y + t) && v; ++dy) v = rows(dy, x);
      out(y, x) = v;
    }
  }
  return BinaryMask(std::move(out));
}

inline BinaryMask dilate(const BinaryMask& mask, int t) { return erode(mask.inverted(), t).inverted(); }

/// Foreground pixels within `thickness` of the background (inner band).
inline CueMap boundary_from_mask(const BinaryMask& mask, int thickness = 1) {
  if (thickness < 1) throw ValidationError("boundary_from_mask: thickness must be >= 1");
  const BinaryMask eroded = erode(mask, thickness);
  CueMap out{Plane(mask.height(), mask.width()), CueKind::kBoundary, CueSource::kMaskDerived};
  for (std::size_t i = 0; i < mask.size(); ++i) out.data[i] = (mask[i] && !eroded[i]) ? 1.0 : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Canny

struct CannyParams {
  double sigma = 1.4;
  double low = 0.1;   // fraction of the maximum gradient magnitude
  double high = 0.3;

  void validate() const {
    if (!(sigma > 0.0)) throw ValidationError("canny: sigma must be positive");
    if (!(low > 0.0 && low < high)) throw ValidationError("canny: thresholds must satisfy 0 < low < high");
  }
};

namespace detail {

inline int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

inline std::vector<double> gaussian_kernel(double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  return k;
}

/// Separable convolution with replicate borders.
inline Plane convolve_separable(const Plane& src, const std::vector<double>& ky, const std::vector<double>& kx) {
  const int h = src.height();
  const int w = src.width();
  const int rx = static_cast<int>(kx.size()) / 2;
  const int ry = static_cast<int>(ky.size()) / 2;
  Plane tmp(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int j = -rx; j <= rx; ++j) acc += kx[j + rx] * src(y, clamp_index(x + j, w));
      tmp(y, x) = acc;
    }
  }
  Plane out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int j = -ry; j <= ry; ++j) acc += ky[j + ry] * tmp(clamp_index(y + j, h), x);
      out(y, x) = acc;
    }
  }
  return out;
}

// Magnitude comparisons with a relative tolerance.
inline bool approx_ge(double a, double b, double scale) { return a >= b - 1e-9 * scale; }
inline bool approx_gt(double a, double b, double scale) { return a > b + 1e-9 * scale; }

}  // namespace detail

/// Binary Canny edge map of a grayscale plane.
inline Grid<std::uint8_t> canny_edges(const Plane& gray, const CannyParams& params = {}) {
  params.validate();
  const int h = gray.height();
  const int w = gray.width();
  Grid<std::uint8_t> edges(h, w);
  if (h == 0 || w == 0) return edges;

  const auto g = detail::gaussian_kernel(params.sigma);
  const Plane smooth = detail::convolve_separable(gray, g, g);
  const Plane gx = detail::convolve_separable(smooth, {1.0, 2.0, 1.0}, {-1.0, 0.0, 1.0});
  const Plane gy = detail::convolve_separable(smooth, {-1.0, 0.0, 1.0}, {1.0, 2.0, 1.0});

  Plane mag(h, w);
  double max_mag = 0.0;
  for (std::size_t i = 0; i < mag.size(); ++i) {
    mag[i] = std::hypot(gx[i], gy[i]);
    max_mag = std::max(max_mag, mag[i]);
  }
  if (max_mag <= 0.0) return edges;

  // Non-maximum suppression along the gradient direction quantized to 0/45/90/135
  // degrees. A pixel survives if it is >= its predecessor and > its successor.
  const double tan22 = std::tan(std::numbers::pi / 8.0);
  const double tan67 = std::tan(3.0 * std::numbers::pi / 8.0);
  Plane thin(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double m = mag(y, x);
      if (m <= 1e-12 * max_mag) continue;
      const double ax = gx(y, x);
      const double ay = gy(y, x);
      int dy = 0;
      int dx = 0;
      const double ratio = std::abs(ay) / std::max(std::abs(ax), 1e-300);
      if (ratio <= tan22) {
        dx = 1;
      } else if (ratio >= tan67) {
        dy = 1;
      } else {
        dy = 1;
        dx = (ax * ay > 0.0) ? 1 : -1;
      }
      auto sample = [&](int yy, int xx) {
        return (yy < 0 || yy >= h || xx < 0 || xx >= w) ? 0.0 : mag(yy, xx);
      };
      const double prev = sample(y - dy, x - dx);
      const double next = sample(y + dy, x + dx);
      if (detail::approx_ge(m, prev, max_mag) && detail::approx_gt(m, next, max_mag)) thin(y, x) = m;
    }
  }

  // Hysteresis, 8-connected.
  const double hi = params.high * max_mag;
  const double lo = params.low * max_mag;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (thin(y, x) >= hi - 1e-12 * max_mag && !edges(y, x)) {
        edges(y, x) = 1;
        stack.emplace_back(y, x);
      }
    }
  }
  while (!stack.empty()) {
    const auto [y, x] = stack.back();
    stack.pop_back();
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int yy = y + dy;
        const int xx = x + dx;
        if (yy < 0 || yy >= h || xx < 0 || xx >= w || edges(yy, xx)) continue;
        if (thin(yy, xx) > 0.0 && thin(yy, xx) >= lo) {
          edges(yy, xx) = 1;
          stack.emplace_back(yy, xx);
        }
      }
    }
  }
  return edges;
}

/// Canny(image) restricted to the object.
inline CueMap canny_label(const RgbImage& image, const BinaryMask& mask, const CannyParams& params = {}) {
  params.validate();
  require_aligned(mask, image.height(), image.width(), "canny_label");
  const auto edges = canny_edges(to_gray(image), params);
  CueMap out{Plane(image.height(), image.width()), CueKind::kCanny, CueSource::kImageDerived};
  for (std::size_t i = 0; i < edges.size(); ++i) out.data[i] = (edges[i] && mask[i]) ? 1.0 : 0.0;
  return out;
}

/// clamp(boundary(mask, 1) + Canny(image) * mask, 0, 1).
inline CueMap texture_label(const BinaryMask& mask, const RgbImage& image, const CannyParams& params = {}) {
  require_aligned(mask, image.height(), image.width(), "texture_label");
  const CueMap edge = boundary_from_mask(mask, 1);
  const CueMap inner = canny_label(image, mask, params);
  CueMap out{Plane(image.height(), image.width()), CueKind::kTexture, CueSource::kImageDerived};
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::min(1.0, edge.data[i] + inner.data[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Blockwise DCT

inline constexpr int kDctBlock = 8;

/// Orthonormal DCT-II matrix: C[k][n] = a_k cos(pi (2n+1) k / 2N).
inline std::vector<double> dct_matrix(int n) {
  std::vector<double> c(static_cast<std::size_t>(n) * n);
  for (int k = 0; k < n; ++k) {
    const double a = std::sqrt((k == 0 ? 1.0 : 2.0) / n);
    for (int i = 0; i < n; ++i) c[k * n + i] = a * std::cos(std::numbers::pi * (2 * i + 1) * k / (2.0 * n));
  }
  return c;
}

namespace detail {

inline void require_block_multiple(const Plane& p, int block, const char* who) {
  if (block < 1) throw ValidationError(std::string(who) + ": block size must be positive");
  if (p.height() % block != 0 || p.width() % block != 0) {
    throw ValidationError(std::string(who) + ": " + std::to_string(p.height()) + "x" + std::to_string(p.width()) +
                          " is not a multiple of the block size " + std::to_string(block));
  }
}

// out_block = L * block * R for every block, with L/R given as row-major n x n.
inline Plane blockwise_transform(const Plane& src, int n, const std::vector<double>& left,
                                 const std::vector<double>& right) {
  Plane out(src.height(), src.width());
  std::vector<double> tmp(static_cast<std::size_t>(n) * n);
  for (int by = 0; by < src.height(); by += n) {
    for (int bx = 0; bx < src.width(); bx += n) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          double acc = 0.0;
          for (int k = 0; k < n; ++k) acc += left[i * n + k] * src(by + k, bx + j);
          tmp[i * n + j] = acc;
        }
      }
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          double acc = 0.0;
          for (int k = 0; k < n; ++k) acc += tmp[i * n + k] * right[k * n + j];
          out(by + i, bx + j) = acc;
        }
      }
    }
  }
  return out;
}

inline std::vector<double> transpose(const std::vector<double>& m, int n) {
  std::vector<double> t(m.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) t[j * n + i] = m[i * n + j];
  }
  return t;
}

}  // namespace detail

/// Per-block 2-D DCT-II; coefficient (u, v) of a block lands at offset (u, v)
/// inside that block.
inline Plane block_dct(const Plane& src, int block = kDctBlock) {
  detail::require_block_multiple(src, block, "block_dct");
  const auto c = dct_matrix(block);
  return detail::blockwise_transform(src, block, c, detail::transpose(c, block));
}

inline Plane block_idct(const Plane& coeffs, int block = kDctBlock) {
  detail::require_block_multiple(coeffs, block, "block_idct");
  const auto c = dct_matrix(block);
  return detail::blockwise_transform(coeffs, block, detail::transpose(c, block), c);
}

struct FrequencyParams {
  int block = kDctBlock;
  bool pad = false;  // replicate-pad to a block multiple instead of failing
};

/// L2 norm of every non-DC coefficient of a pixel's block over all three
/// channels, broadcast over the block and min-max normalized.
inline CueMap frequency_label(const RgbImage& image, const FrequencyParams& params = {}) {
  const int h = image.height();
  const int w = image.width();
  const int n = params.block;
  if (n < 1) throw ValidationError("frequency_label: block size must be positive");
  const int ph = (h + n - 1) / n * n;
  const int pw = (w + n - 1) / n * n;
  if ((ph != h || pw != w) && !params.pad) {
    throw ValidationError("frequency_label: " + std::to_string(h) + "x" + std::to_string(w) +
                          " is not a multiple of the block size " + std::to_string(n));
  }
  Plane energy(ph, pw);
  for (const Plane& channel : image.channels) {
    Plane padded(ph, pw);
    for (int y = 0; y < ph; ++y) {
      for (int x = 0; x < pw; ++x) padded(y, x) = channel(std::min(y, h - 1), std::min(x, w - 1));
    }
    const Plane coeffs = block_dct(padded, n);
    for (int by = 0; by < ph; by += n) {
      for (int bx = 0; bx < pw; bx += n) {
        double e = 0.0;
        for (int u = 0; u < n; ++u) {
          for (int v = 0; v < n; ++v) {
            if (u == 0 && v == 0) continue;
            e += coeffs(by + u, bx + v) * coeffs(by + u, bx + v);
          }
        }
        energy(by, bx) += e;
      }
    }
  }
  CueMap out{Plane(h, w), CueKind::kFrequency, CueSource::kImageDerived};
  double lo = INFINITY;
  double hi = -INFINITY;
  for (int by = 0; by < ph; by += n) {
    for (int bx = 0; bx < pw; bx += n) {
      energy(by, bx) = std::sqrt(energy(by, bx));
      lo = std::min(lo, energy(by, bx));
      hi = std::max(hi, energy(by, bx));
    }
  }
  const double range = hi - lo;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double e = energy(y / n * n, x / n * n);
      out.data(y, x) = range > 1e-12 ? std::clamp((e - lo) / range, 0.0, 1.0) : 0.0;
    }
  }
  return out;
}

struct CueParams {
  int boundary_thickness = 1;
  CannyParams canny;
  FrequencyParams frequency;
};

inline CueMap generate_cue(CueKind kind, const RgbImage& image, const BinaryMask& mask, const CueParams& params = {}) {
  require_aligned(mask, image.height(), image.width(), "generate_cue");
  switch (kind) {
    case CueKind::kBoundary: return boundary_from_mask(mask, params.boundary_thickness);
    case CueKind::kTexture: return texture_label(mask, image, params.canny);
    case CueKind::kCanny: return canny_label(image, mask, params.canny);
    case CueKind::kFrequency: return frequency_label(image, params.frequency);
  }
  throw ValidationError("generate_cue: unknown kind");
}

}  // namespace aglnet
