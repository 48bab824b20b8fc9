#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "aglnet/config.hpp"
#include "aglnet/cue_gen.hpp"
#include "aglnet/io.hpp"

namespace aglnet {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Synthetic camouflage scenes

struct RawSample {
  std::string name;
  RgbImage image;
  BinaryMask mask;
};

struct SyntheticOptions {
  int count = 32;
  int size = 64;
  std::uint64_t seed = 0;
  double contrast = 0.14;  // colour offset between object and background
};

namespace detail {

struct Wave {
  double fx, fy, phase, amp;
};

inline std::vector<Wave> random_waves(std::mt19937_64& rng, int count, double freq_lo, double freq_hi, double amp) {
  std::uniform_real_distribution<double> freq(freq_lo, freq_hi);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::vector<Wave> waves;
  for (int i = 0; i < count; ++i) {
    const double f = freq(rng);
    const double a = angle(rng);
    waves.push_back({f * std::cos(a), f * std::sin(a), angle(rng), amp});
  }
  return waves;
}

inline double texture_at(const std::vector<Wave>& waves, double y, double x) {
  double v = 0.0;
  for (const auto& w : waves) v += w.amp * std::sin(2.0 * std::numbers::pi * (w.fx * x + w.fy * y) + w.phase);
  return v;
}

// Star-shaped region: ellipse or irregular polygon around a centre.
inline BinaryMask random_shape(std::mt19937_64& rng, int size) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double cy = size * (0.35 + 0.3 * u(rng));
  const double cx = size * (0.35 + 0.3 * u(rng));
  const double r0 = size * (0.16 + 0.12 * u(rng));
  BinaryMask m(size, size);
  if (u(rng) < 0.5) {
    const double ry = r0 * (0.7 + 0.5 * u(rng));
    const double rx = r0 * (0.7 + 0.5 * u(rng));
    const double theta = u(rng) * std::numbers::pi;
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dy = y + 0.5 - cy;
        const double dx = x + 0.5 - cx;
        const double a = (c * dx + s * dy) / rx;
        const double b = (-s * dx + c * dy) / ry;
        m.set(y, x, a * a + b * b <= 1.0);
      }
    }
  } else {
    const int n = 5 + static_cast<int>(u(rng) * 3);
    std::vector<double> radii(n);
    for (double& r : radii) r = r0 * (0.7 + 0.6 * u(rng));
    const double rot = u(rng) * 2.0 * std::numbers::pi;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dy = y + 0.5 - cy;
        const double dx = x + 0.5 - cx;
        double ang = std::atan2(dy, dx) - rot;
        ang = std::fmod(ang + 4.0 * std::numbers::pi, 2.0 * std::numbers::pi);
        const double pos = ang / (2.0 * std::numbers::pi) * n;
        const int i0 = static_cast<int>(pos) % n;
        const int i1 = (i0 + 1) % n;
        const double t = pos - std::floor(pos);
        // Straight edge between consecutive vertices in polar form.
        const double a0 = 2.0 * std::numbers::pi * i0 / n;
        const double a1 = 2.0 * std::numbers::pi * (i0 + 1) / n;
        const double p0x = radii[i0] * std::cos(a0);
        const double p0y = radii[i0] * std::sin(a0);
        const double p1x = radii[i1] * std::cos(a1);
        const double p1y = radii[i1] * std::sin(a1);
        const double a = a0 + t * (a1 - a0);
        const double dirx = std::cos(a);
        const double diry = std::sin(a);
        const double ex = p1x - p0x;
        const double ey = p1y - p0y;
        const double denom = dirx * ey - diry * ex;
        const double edge_r = std::abs(denom) < 1e-12 ? radii[i0] : (p0x * ey - p0y * ex) / denom;
        m.set(y, x, std::hypot(dx, dy) <= edge_r);
      }
    }
  }
  return m;
}

}  // namespace detail

/// Scene `index` of a seeded stream: a textured background and one object
/// whose colour and texture are close to, but not identical with, the
/// background.
inline RawSample synthetic_sample(const SyntheticOptions& opt, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(opt.seed), static_cast<std::uint32_t>(opt.seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = opt.size;
  RawSample s;
  s.name = "synthetic_" + std::to_string(index);
  s.mask = detail::random_shape(rng, n);

  std::array<double, 3> base{};
  for (double& b : base) b = 0.3 + 0.4 * u(rng);
  std::array<double, 3> offset{};
  double norm = 0.0;
  for (double& o : offset) {
    o = u(rng) - 0.5;
    norm += o * o;
  }
  norm = std::sqrt(norm);
  for (double& o : offset) o *= opt.contrast / std::max(norm, 1e-9);

  // Frequencies in cycles per pixel; the object texture is finer.
  const auto bg_waves = detail::random_waves(rng, 3, 0.5 / 16.0, 1.5 / 16.0, 0.06);
  const auto fg_waves = detail::random_waves(rng, 3, 2.0 / 16.0, 3.5 / 16.0, 0.06);
  std::normal_distribution<double> noise(0.0, 0.015);
  s.image = RgbImage(n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const bool fg = s.mask(y, x);
      const double t = detail::texture_at(fg ? fg_waves : bg_waves, y, x);
      for (int c = 0; c < 3; ++c) {
        const double v = base[c] + (fg ? offset[c] : 0.0) + t * (c == 1 ? 1.0 : 0.8) + noise(rng);
        s.image.channels[c](y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Manifests

struct ManifestEntry {
  std::string name;  // shared stem
  fs::path image;
  fs::path mask;
};

struct DatasetManifest {
  fs::path root;
  std::string split = "train";
  DatasetLayout layout = DatasetLayout::kFlat;
  std::vector<ManifestEntry> entries;
};

/// Image and mask directories of each supported layout.
inline std::pair<fs::path, fs::path> layout_dirs(const fs::path& root, DatasetLayout layout, const std::string& split) {
  const std::string cap = split == "test" ? "Test" : "Train";
  switch (layout) {
    case DatasetLayout::kFlat: return {root / "images", root / "masks"};
    case DatasetLayout::kCod10k: return {root / cap / "Image", root / cap / "GT_Object"};
    case DatasetLayout::kCamo: return {root / "Images" / cap, root / "GT"};
    case DatasetLayout::kNc4k: return {root / "Imgs", root / "GT"};
    case DatasetLayout::kSynthetic: break;
  }
  throw ValidationError("layout has no directory structure");
}

inline std::map<std::string, fs::path> images_by_stem(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && io::is_image_file(e.path())) out[e.path().stem().string()] = e.path();
  }
  return out;
}

inline DatasetManifest load_manifest(const fs::path& root, DatasetLayout layout, const std::string& split = "train") {
  DatasetManifest m{root, split, layout, {}};
  const auto [image_dir, mask_dir] = layout_dirs(root, layout, split);
  const auto images = images_by_stem(image_dir);
  const auto masks = images_by_stem(mask_dir);
  for (const auto& [stem, path] : images) {
    const auto it = masks.find(stem);
    if (it == masks.end()) throw ValidationError("missing mask for " + path.string());
    m.entries.push_back({stem, path, it->second});
  }
  return m;
}

/// Pairs images with same-stem masks in two arbitrary directories.
inline DatasetManifest manifest_from_dirs(const fs::path& image_dir, const fs::path& mask_dir) {
  DatasetManifest m{image_dir, "test", DatasetLayout::kFlat, {}};
  const auto masks = images_by_stem(mask_dir);
  for (const auto& [stem, path] : images_by_stem(image_dir)) {
    const auto it = masks.find(stem);
    if (it == masks.end()) throw ValidationError("missing mask for " + path.string());
    m.entries.push_back({stem, path, it->second});
  }
  return m;
}

inline RawSample load_entry(const ManifestEntry& e) {
  RawSample s{e.name, io::read_rgb(e.image), io::read_mask(e.mask)};
  if (s.image.height() != s.mask.height() || s.image.width() != s.mask.width()) {
    throw ValidationError("size mismatch between " + e.image.string() + " and " + e.mask.string());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Cue cache

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string cue_params_signature(CueKind kind, const CueParams& p) {
  std::ostringstream os;
  os.precision(17);
  os << cue_kind_name(kind) << ";t=" << p.boundary_thickness << ";s=" << p.canny.sigma << ";lo=" << p.canny.low
     << ";hi=" << p.canny.high << ";b=" << p.frequency.block << ";pad=" << p.frequency.pad;
  return os.str();
}

/// Rounds to the nearest multiple of 1/255, the precision of the cache.
inline Plane quantize8(Plane p) {
  for (double& v : p.values()) v = io::to_byte(v) / 255.0;
  return p;
}

class CueCache {
 public:
  explicit CueCache(std::optional<fs::path> dir) : dir_(std::move(dir)) {
    if (dir_) fs::create_directories(*dir_);
  }

  /// Directory from AGL_CACHE_DIR, or no caching when unset.
  static CueCache from_environment() {
    const char* env = std::getenv("AGL_CACHE_DIR");
    return CueCache(env && *env ? std::optional<fs::path>(env) : std::nullopt);
  }

  [[nodiscard]] bool enabled() const { return dir_.has_value(); }

  static std::string key(const RgbImage& image, const BinaryMask& mask, CueKind kind, const CueParams& params) {
    std::uint64_t h = fnv1a(nullptr, 0);
    const int dims[2] = {image.height(), image.width()};
    h = fnv1a(dims, sizeof(dims), h);
    for (const auto& ch : image.channels) h = fnv1a(ch.values().data(), ch.size() * sizeof(double), h);
    h = fnv1a(mask.grid().values().data(), mask.size(), h);
    const std::string sig = cue_params_signature(kind, params);
    h = fnv1a(sig.data(), sig.size(), h);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  [[nodiscard]] std::optional<fs::path> path_for(const std::string& key) const {
    if (!dir_) return std::nullopt;
    return *dir_ / (key + ".png");
  }

  /// Cue map quantized to 8 bits, read from or written to the cache.
  [[nodiscard]] Plane get_or_compute(const RgbImage& image, const BinaryMask& mask, CueKind kind,
                                     const CueParams& params) const {
    const auto path = path_for(key(image, mask, kind, params));
    if (path && fs::exists(*path)) {
      Plane p = io::read_plane(*path);
      if (p.height() == image.height() && p.width() == image.width()) return p;
    }
    Plane cue = quantize8(generate_cue(kind, image, mask, params).data);
    if (path) io::write_plane(*path, cue);
    return cue;
  }

 private:
  std::optional<fs::path> dir_;
};

// ---------------------------------------------------------------------------
// Preparation and augmentation

struct PreparedSample {
  std::string name;
  RgbImage image;
  BinaryMask mask;
  Plane cue;
};

inline PreparedSample prepare_sample(const RawSample& raw, int size, CueKind kind, const CueParams& params,
                                     const CueCache& cache) {
  PreparedSample p;
  p.name = raw.name;
  p.image = resize_bilinear(raw.image, size, size);
  p.mask = resize_nearest(raw.mask, size, size);
  p.cue = cache.get_or_compute(p.image, p.mask, kind, params);
  return p;
}

struct AugmentOptions {
  bool flip = true;
  bool crop = true;
  bool jitter = true;
};

struct AugmentParams {
  bool flip = false;
  double crop_scale = 1.0;
  double crop_top = 0.0;   // fractions of the free margin
  double crop_left = 0.0;
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
};

inline AugmentParams draw_augment(std::mt19937_64& rng, const AugmentOptions& opt) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  AugmentParams p;
  // Seven draws per sample regardless of which options are on.
  const double r_flip = u(rng);
  const double r_scale = u(rng);
  const double r_top = u(rng);
  const double r_left = u(rng);
  const double r_b = u(rng);
  const double r_c = u(rng);
  const double r_s = u(rng);
  if (opt.flip) p.flip = r_flip < 0.5;
  if (opt.crop) {
    p.crop_scale = 0.75 + 0.25 * r_scale;
    p.crop_top = r_top;
    p.crop_left = r_left;
  }
  if (opt.jitter) {
    p.brightness = 0.9 + 0.2 * r_b;
    p.contrast = 0.9 + 0.2 * r_c;
    p.saturation = 0.9 + 0.2 * r_s;
  }
  return p;
}

inline RgbImage color_jitter(const RgbImage& img, double brightness, double contrast, double saturation) {
  RgbImage out = img;
  for (auto& ch : out.channels) {
    for (double& v : ch.values()) v = std::clamp(v * brightness, 0.0, 1.0);
  }
  const Plane gray = to_gray(out);
  double mean = 0.0;
  for (double v : gray.values()) mean += v;
  mean /= static_cast<double>(std::max<std::size_t>(gray.size(), 1));
  for (auto& ch : out.channels) {
    for (double& v : ch.values()) v = std::clamp(mean + contrast * (v - mean), 0.0, 1.0);
  }
  const Plane gray2 = to_gray(out);
  for (auto& ch : out.channels) {
    for (std::size_t i = 0; i < ch.size(); ++i) ch[i] = std::clamp(gray2[i] + saturation * (ch[i] - gray2[i]), 0.0, 1.0);
  }
  return out;
}

/// Applies one draw of flip / crop-and-resize / colour jitter jointly; the
/// geometric parts touch image, mask and cue identically.
inline PreparedSample apply_augment(const PreparedSample& s, const AugmentParams& p) {
  PreparedSample out = s;
  if (p.flip) {
    out.image = flip_horizontal(out.image);
    out.mask = flip_horizontal(out.mask);
    out.cue = flip_horizontal(out.cue);
  }
  if (p.crop_scale < 1.0) {
    const int h = out.mask.height();
    const int w = out.mask.width();
    const int ch = std::max(1, static_cast<int>(std::lround(p.crop_scale * h)));
    const int cw = std::max(1, static_cast<int>(std::lround(p.crop_scale * w)));
    const int top = static_cast<int>(std::floor(p.crop_top * (h - ch + 1 - 1e-9)));
    const int left = static_cast<int>(std::floor(p.crop_left * (w - cw + 1 - 1e-9)));
    out.image = resize_bilinear(crop(out.image, top, left, ch, cw), h, w);
    out.mask = resize_nearest(crop(out.mask, top, left, ch, cw), h, w);
    out.cue = clamp01(resize_bilinear(crop(out.cue, top, left, ch, cw), h, w));
  }
  if (p.brightness != 1.0 || p.contrast != 1.0 || p.saturation != 1.0) {
    out.image = color_jitter(out.image, p.brightness, p.contrast, p.saturation);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Train / validation split and batching

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// floor(fraction * n) samples, chosen by a seeded shuffle, go to validation.
inline SplitIndices split_train_val(std::size_t n, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto nval = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  SplitIndices s;
  s.val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nval));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(nval), idx.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

struct Batch {
  Tensor images;  // (B,3,S,S)
  Tensor masks;   // (B,1,S,S)
  Tensor cues;    // (B,1,S,S)
  std::vector<std::size_t> indices;
  std::vector<std::string> names;
};

inline Batch collate(const std::vector<PreparedSample>& samples, const std::vector<std::size_t>& indices) {
  std::vector<RgbImage> images;
  std::vector<BinaryMask> masks;
  std::vector<Plane> cues;
  Batch b;
  for (const auto& s : samples) {
    images.push_back(s.image);
    masks.push_back(s.mask);
    cues.push_back(s.cue);
    b.names.push_back(s.name);
  }
  b.images = to_tensor(std::span<const RgbImage>(images));
  b.masks = to_tensor(std::span<const BinaryMask>(masks));
  b.cues = to_tensor(std::span<const Plane>(cues));
  b.indices = indices;
  return b;
}

/// Seeded epoch iterator over prepared samples. Each epoch is a fresh
/// shuffle; the last batch of an epoch may be short.
class DataLoader {
 public:
  using Source = std::function<PreparedSample(std::size_t)>;

  DataLoader(Source source, std::vector<std::size_t> indices, int batch_size, AugmentOptions augment,
             std::uint64_t seed, bool memoize = true)
      : source_(std::move(source)), indices_(std::move(indices)), batch_size_(batch_size), augment_(augment),
        rng_(seed), memoize_(memoize) {
    if (indices_.empty()) throw ValidationError("DataLoader: no samples");
    if (batch_size < 1) throw ValidationError("DataLoader: batch size must be >= 1");
    reshuffle();
  }

  Batch next() {
    if (cursor_ >= order_.size()) {
      ++epoch_;
      reshuffle();
    }
    std::vector<PreparedSample> samples;
    std::vector<std::size_t> picked;
    while (cursor_ < order_.size() && static_cast<int>(samples.size()) < batch_size_) {
      const std::size_t idx = order_[cursor_++];
      picked.push_back(idx);
      samples.push_back(apply_augment(fetch(idx), draw_augment(rng_, augment_)));
    }
    return collate(samples, picked);
  }

  [[nodiscard]] std::size_t epoch() const { return epoch_; }
  [[nodiscard]] std::size_t size() const { return indices_.size(); }
  [[nodiscard]] std::size_t steps_per_epoch() const {
    return (indices_.size() + static_cast<std::size_t>(batch_size_) - 1) / static_cast<std::size_t>(batch_size_);
  }

  const PreparedSample& fetch(std::size_t idx) {
    if (!memoize_) {
      scratch_ = source_(idx);
      return scratch_;
    }
    auto it = memo_.find(idx);
    if (it == memo_.end()) it = memo_.emplace(idx, source_(idx)).first;
    return it->second;
  }

 private:
  void reshuffle() {
    order_ = indices_;
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }

  Source source_;
  std::vector<std::size_t> indices_;
  int batch_size_;
  AugmentOptions augment_;
  std::mt19937_64 rng_;
  bool memoize_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
  std::map<std::size_t, PreparedSample> memo_;
  PreparedSample scratch_;
};

/// Raw-sample provider for a training config: synthetic scenes or files.
class SampleProvider {
 public:
  explicit SampleProvider(const TrainConfig& cfg) : cfg_(cfg) {
    if (cfg.layout == DatasetLayout::kSynthetic) {
      count_ = static_cast<std::size_t>(cfg.synthetic_count);
    } else {
      manifest_ = load_manifest(cfg.data_root, cfg.layout, cfg.data_split);
      count_ = manifest_.entries.size();
      if (count_ == 0) throw ValidationError("dataset " + cfg.data_root + " has no samples");
    }
  }

  [[nodiscard]] std::size_t size() const { return count_; }

  [[nodiscard]] RawSample raw(std::size_t i) const {
    if (cfg_.layout == DatasetLayout::kSynthetic) {
      return synthetic_sample({cfg_.synthetic_count, cfg_.input_size, cfg_.model.seed}, static_cast<int>(i));
    }
    return load_entry(manifest_.entries.at(i));
  }

  [[nodiscard]] const DatasetManifest& manifest() const { return manifest_; }

 private:
  TrainConfig cfg_;
  DatasetManifest manifest_;
  std::size_t count_ = 0;
};

}  // namespace aglnet
