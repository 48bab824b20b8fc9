#pragma once

// Plain raster containers used outside the autograd graph (dataset, cue
// generation, metrics) and their conversions to batch tensors.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "aglnet/ops.hpp"
#include "aglnet/tensor.hpp"

namespace aglnet {

/// Row-major 2-D array.
template <class T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, T fill = T{}) : height_(height), width_(width) {
    if (height < 0 || width < 0) throw ValidationError("Grid: negative size");
    values_.assign(static_cast<std::size_t>(height) * width, fill);
  }

  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] std::size_t size() const { return values_.size(); }
  [[nodiscard]] bool empty() const { return values_.empty(); }

  T& operator()(int y, int x) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  const T& operator()(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  [[nodiscard]] std::span<T> values() { return values_; }
  [[nodiscard]] std::span<const T> values() const { return values_; }

  [[nodiscard]] bool same_size(const auto& other) const {
    return height_ == other.height() && width_ == other.width();
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> values_;
};

using Plane = Grid<double>;

/// Planar RGB image with values in [0,1].
struct RgbImage {
  std::array<Plane, 3> channels;

  RgbImage() = default;
  RgbImage(int height, int width, double fill = 0.0)
      : channels{Plane(height, width, fill), Plane(height, width, fill), Plane(height, width, fill)} {}

  [[nodiscard]] int height() const { return channels[0].height(); }
  [[nodiscard]] int width() const { return channels[0].width(); }
};

/// Object-level ground truth: every element exactly 0 or 1.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, std::uint8_t fill = 0) : grid_(height, width, fill) {
    if (fill > 1) throw ValidationError("BinaryMask: fill must be 0 or 1");
  }

  /// Validating constructor: throws if any element is not exactly 0 or 1.
  explicit BinaryMask(Grid<std::uint8_t> grid) : grid_(std::move(grid)) {
    for (auto v : grid_.values()) {
      if (v > 1) throw ValidationError("BinaryMask: non-binary value " + std::to_string(v));
    }
  }

  static BinaryMask from_plane(const Plane& plane) {
    Grid<std::uint8_t> g(plane.height(), plane.width());
    for (std::size_t i = 0; i < plane.size(); ++i) {
      if (plane[i] != 0.0 && plane[i] != 1.0) {
        throw ValidationError("BinaryMask: non-binary value " + std::to_string(plane[i]));
      }
      g[i] = plane[i] == 1.0 ? 1 : 0;
    }
    return BinaryMask(std::move(g));
  }

  /// Binarizes an 8-bit mask at > 127.
  static BinaryMask from_gray8(const Grid<std::uint8_t>& gray) {
    Grid<std::uint8_t> g(gray.height(), gray.width());
    for (std::size_t i = 0; i < gray.size(); ++i) g[i] = gray[i] > 127 ? 1 : 0;
    return BinaryMask(std::move(g));
  }

  [[nodiscard]] int height() const { return grid_.height(); }
  [[nodiscard]] int width() const { return grid_.width(); }
  [[nodiscard]] std::size_t size() const { return grid_.size(); }
  [[nodiscard]] std::uint8_t operator()(int y, int x) const { return grid_(y, x); }
  [[nodiscard]] std::uint8_t operator[](std::size_t i) const { return grid_[i]; }
  void set(int y, int x, bool on) { grid_(y, x) = on ? 1 : 0; }
  [[nodiscard]] const Grid<std::uint8_t>& grid() const { return grid_; }

  [[nodiscard]] Plane to_plane() const {
    Plane p(height(), width());
    for (std::size_t i = 0; i < size(); ++i) p[i] = grid_[i];
    return p;
  }

  [[nodiscard]] BinaryMask inverted() const {
    Grid<std::uint8_t> g(height(), width());
    for (std::size_t i = 0; i < size(); ++i) g[i] = 1 - grid_[i];
    return BinaryMask(std::move(g));
  }

  [[nodiscard]] std::size_t count() const {
    std::size_t n = 0;
    for (auto v : grid_.values()) n += v;
    return n;
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  Grid<std::uint8_t> grid_;
};

// ---------------------------------------------------------------------------
// Raster operations

/// Bilinear resize with half-pixel centres (same taps as the tensor op).
inline Plane resize_bilinear(const Plane& src, int out_h, int out_w) {
  if (out_h == src.height() && out_w == src.width()) return src;
  const auto ty = ops::detail::linear_taps(src.height(), out_h);
  const auto tx = ops::detail::linear_taps(src.width(), out_w);
  Plane out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const double top = src(ty.i0[y], tx.i0[x]) * (1.0 - tx.w1[x]) + src(ty.i0[y], tx.i1[x]) * tx.w1[x];
      const double bot = src(ty.i1[y], tx.i0[x]) * (1.0 - tx.w1[x]) + src(ty.i1[y], tx.i1[x]) * tx.w1[x];
      out(y, x) = top * (1.0 - ty.w1[y]) + bot * ty.w1[y];
    }
  }
  return out;
}

inline RgbImage resize_bilinear(const RgbImage& src, int out_h, int out_w) {
  RgbImage out;
  for (int c = 0; c < 3; ++c) out.channels[c] = resize_bilinear(src.channels[c], out_h, out_w);
  return out;
}

template <class T>
Grid<T> resize_nearest(const Grid<T>& src, int out_h, int out_w) {
  Grid<T> out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(src.height() - 1, static_cast<int>(std::floor((y + 0.5) * src.height() / out_h)));
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(src.width() - 1, static_cast<int>(std::floor((x + 0.5) * src.width() / out_w)));
      out(y, x) = src(sy, sx);
    }
  }
  return out;
}

inline BinaryMask resize_nearest(const BinaryMask& src, int out_h, int out_w) {
  return BinaryMask(resize_nearest(src.grid(), out_h, out_w));
}

template <class T>
Grid<T> flip_horizontal(const Grid<T>& src) {
  Grid<T> out(src.height(), src.width());
  for (int y = 0; y < src.height(); ++y) {
    for (int x = 0; x < src.width(); ++x) out(y, x) = src(y, src.width() - 1 - x);
  }
  return out;
}

inline RgbImage flip_horizontal(const RgbImage& src) {
  RgbImage out;
  for (int c = 0; c < 3; ++c) out.channels[c] = flip_horizontal(src.channels[c]);
  return out;
}

inline BinaryMask flip_horizontal(const BinaryMask& src) { return BinaryMask(flip_horizontal(src.grid())); }

template <class T>
Grid<T> crop(const Grid<T>& src, int top, int left, int height, int width) {
  if (top < 0 || left < 0 || top + height > src.height() || left + width > src.width()) {
    throw ValidationError("crop: window outside the image");
  }
  Grid<T> out(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) out(y, x) = src(top + y, left + x);
  }
  return out;
}

inline RgbImage crop(const RgbImage& src, int top, int left, int height, int width) {
  RgbImage out;
  for (int c = 0; c < 3; ++c) out.channels[c] = crop(src.channels[c], top, left, height, width);
  return out;
}

inline BinaryMask crop(const BinaryMask& src, int top, int left, int height, int width) {
  return BinaryMask(crop(src.grid(), top, left, height, width));
}

/// Luma with 0.299 / 0.587 / 0.114 weights.
inline Plane to_gray(const RgbImage& img) {
  Plane out(img.height(), img.width());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.299 * img.channels[0][i] + 0.587 * img.channels[1][i] + 0.114 * img.channels[2][i];
  }
  return out;
}

inline Plane clamp01(Plane p) {
  for (double& v : p.values()) v = std::clamp(v, 0.0, 1.0);
  return p;
}

// ---------------------------------------------------------------------------
// Tensor conversion

inline Tensor to_tensor(std::span<const RgbImage> images) {
  if (images.empty()) throw ValidationError("to_tensor: empty batch");
  const int h = images[0].height();
  const int w = images[0].width();
  Tensor t({static_cast<int>(images.size()), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n].height() != h || images[n].width() != w) throw ValidationError("to_tensor: ragged batch");
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) t.at(static_cast<int>(n), c, y, x) = images[n].channels[c](y, x);
      }
    }
  }
  return t;
}

inline Tensor to_tensor(std::span<const Plane> planes) {
  if (planes.empty()) throw ValidationError("to_tensor: empty batch");
  const int h = planes[0].height();
  const int w = planes[0].width();
  Tensor t({static_cast<int>(planes.size()), 1, h, w});
  for (std::size_t n = 0; n < planes.size(); ++n) {
    if (planes[n].height() != h || planes[n].width() != w) throw ValidationError("to_tensor: ragged batch");
    std::copy(planes[n].values().begin(), planes[n].values().end(),
              t.data().begin() + static_cast<std::ptrdiff_t>(n * planes[n].size()));
  }
  return t;
}

inline Tensor to_tensor(std::span<const BinaryMask> masks) {
  std::vector<Plane> planes;
  planes.reserve(masks.size());
  for (const auto& m : masks) planes.push_back(m.to_plane());
  return to_tensor(std::span<const Plane>(planes));
}

/// Channel `c` of sample `n` as a plane.
inline Plane plane_of(const Tensor& t, int n, int c = 0) {
  const Shape& s = t.shape();
  Plane p(s.h, s.w);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) p(y, x) = t.at(n, c, y, x);
  }
  return p;
}

}  // namespace aglnet
