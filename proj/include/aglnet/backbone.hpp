#pragma once

// Multi-scale visual features at strides 8/16/32 behind a swappable
// extractor contract, plus the learned projection to a common width C.

#include <array>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include "aglnet/nn.hpp"

namespace aglnet {

inline constexpr std::array<int, 3> kPyramidStrides{8, 16, 32};

/// Raw backbone features X^r_1..X^r_3, finest first.
struct FeaturePyramid {
  std::array<Tensor, 3> levels;
  std::array<int, 3> strides = kPyramidStrides;
};

/// Backbone features after projection to a shared channel width.
struct ProjectedPyramid {
  std::array<Tensor, 3> levels;
  int channels = 0;
};

enum class BackboneId { kTiny, kEfficientNetB4, kResNet50, kRes2Net50 };

struct BackboneInfo {
  BackboneId id;
  std::string_view name;
  std::array<int, 3> raw_channels;  // channels of the stride 8/16/32 taps
  std::string_view taps;            // which stages feed the three levels
};

// Stage taps feeding the stride 8/16/32 levels.
inline constexpr std::array<BackboneInfo, 4> kBackbones{{
    {BackboneId::kTiny, "tiny", {32, 48, 64}, "stem (3 stride-2 convs) | stage 2 | stage 3"},
    {BackboneId::kEfficientNetB4, "efficientnet_b4", {56, 160, 448}, "blocks[2] | blocks[4] | blocks[6]"},
    {BackboneId::kResNet50, "resnet50", {512, 1024, 2048}, "layer2 | layer3 | layer4"},
    {BackboneId::kRes2Net50, "res2net50", {512, 1024, 2048}, "layer2 | layer3 | layer4"},
}};

inline const BackboneInfo& backbone_info(BackboneId id) {
  for (const auto& info : kBackbones) {
    if (info.id == id) return info;
  }
  throw ValidationError("unknown backbone id");
}

inline BackboneId parse_backbone_id(std::string_view name) {
  for (const auto& info : kBackbones) {
    if (info.name == name) return info.id;
  }
  throw ValidationError("unknown backbone id '" + std::string(name) +
                        "' (expected tiny|efficientnet_b4|resnet50|res2net50)");
}

inline void require_divisible_input(const Tensor& image, int divisor, const char* who) {
  const Shape& s = image.shape();
  if (s.c != 3) throw ValidationError(std::string(who) + ": expected 3-channel image batch, got " + to_string(s));
  if (s.h % divisor != 0 || s.w % divisor != 0) {
    throw ValidationError(std::string(who) + ": input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                          " not divisible by " + std::to_string(divisor));
  }
}

class Backbone : public nn::Module {
 public:
  [[nodiscard]] virtual FeaturePyramid extract(const Tensor& image) const = 0;
  [[nodiscard]] virtual std::array<int, 3> raw_channels() const = 0;
  [[nodiscard]] virtual BackboneId id() const = 0;
};

/// Small randomly initialised CNN, about 52k parameters.
class TinyBackbone : public Backbone {
 public:
  explicit TinyBackbone(std::mt19937_64& rng)
      : stem_{nn::ConvBlock(3, 16, 3, rng, 2), nn::ConvBlock(16, 24, 3, rng, 2), nn::ConvBlock(24, 32, 3, rng, 2)},
        stage2_(32, 48, 3, rng, 2),
        stage3_(48, 64, 3, rng, 2) {}

  [[nodiscard]] FeaturePyramid extract(const Tensor& image) const override {
    require_divisible_input(image, 32, "backbone");
    Tensor x = image;
    for (const auto& block : stem_) x = block.forward(x);
    FeaturePyramid pyr;
    pyr.levels[0] = x;
    pyr.levels[1] = stage2_.forward(pyr.levels[0]);
    pyr.levels[2] = stage3_.forward(pyr.levels[1]);
    return pyr;
  }

  [[nodiscard]] std::array<int, 3> raw_channels() const override { return {32, 48, 64}; }
  [[nodiscard]] BackboneId id() const override { return BackboneId::kTiny; }

  void visit_parameters(const nn::ParameterVisitor& fn, const std::string& prefix) override {
    for (std::size_t i = 0; i < stem_.size(); ++i) stem_[i].visit_parameters(fn, nn::join(prefix, "stem" + std::to_string(i)));
    stage2_.visit_parameters(fn, nn::join(prefix, "stage2"));
    stage3_.visit_parameters(fn, nn::join(prefix, "stage3"));
  }

 private:
  std::array<nn::ConvBlock, 3> stem_;
  nn::ConvBlock stage2_;
  nn::ConvBlock stage3_;
};

/// Only `tiny` ships in-tree; the pretrained ids report that they are not bundled.
inline std::unique_ptr<Backbone> make_backbone(BackboneId id, std::mt19937_64& rng,
                                               const std::optional<std::string>& weights = std::nullopt) {
  if (id == BackboneId::kTiny) {
    if (weights) throw ValidationError("backbone 'tiny' has no pretrained weights to load");
    return std::make_unique<TinyBackbone>(rng);
  }
  throw std::runtime_error("backbone '" + std::string(backbone_info(id).name) +
                           "' is not bundled with this build; plug an implementation of aglnet::Backbone "
                           "exposing taps " + std::string(backbone_info(id).taps));
}

/// Learned 1x1 conv (+ norm + ReLU) per level to a shared width C.
class PyramidProjection : public nn::Module {
 public:
  PyramidProjection(const std::array<int, 3>& raw_channels, int channels, std::mt19937_64& rng)
      : channels_(channels),
        blocks_{nn::ConvBlock(raw_channels[0], channels, 1, rng), nn::ConvBlock(raw_channels[1], channels, 1, rng),
                nn::ConvBlock(raw_channels[2], channels, 1, rng)} {
    if (channels < 1) throw ValidationError("projection width must be >= 1");
  }

  [[nodiscard]] ProjectedPyramid forward(const FeaturePyramid& pyr) const {
    ProjectedPyramid out;
    out.channels = channels_;
    for (std::size_t i = 0; i < 3; ++i) out.levels[i] = blocks_[i].forward(pyr.levels[i]);
    return out;
  }

  void visit_parameters(const nn::ParameterVisitor& fn, const std::string& prefix) override {
    for (std::size_t i = 0; i < 3; ++i) blocks_[i].visit_parameters(fn, nn::join(prefix, "level" + std::to_string(i + 1)));
  }

 private:
  int channels_;
  std::array<nn::ConvBlock, 3> blocks_;
};

}  // namespace aglnet
