#pragma once

// Additional-information generation: three (avg-pool, conv) stages bring the
// image to stride 8 as the cue feature A, and a 1x1 head predicts the cue map.

#include <array>
#include <random>
#include <string>

#include "aglnet/backbone.hpp"
#include "aglnet/nn.hpp"

namespace aglnet {

struct CueOutput {
  Tensor feature;     // A: (B, C, H/8, W/8)
  Tensor prediction;  // r^s: (B, 1, H/8, W/8), logits
};

class AdditionalInfoGenerator : public nn::Module {
 public:
  AdditionalInfoGenerator(int channels, std::mt19937_64& rng)
      : channels_(channels),
        stages_{nn::ConvBlock(3, channels, 3, rng), nn::ConvBlock(channels, channels, 3, rng),
                nn::ConvBlock(channels, channels, 3, rng)},
        head_(channels, 1, rng) {}

  [[nodiscard]] CueOutput forward(const Tensor& image) const {
    require_divisible_input(image, 8, "aig");
    Tensor x = image;
    for (const auto& stage : stages_) x = stage.forward(ops::avg_pool2(x));
    return {x, head_.forward(x)};
  }

  [[nodiscard]] int channels() const { return channels_; }

  void visit_parameters(const nn::ParameterVisitor& fn, const std::string& prefix) override {
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      stages_[i].visit_parameters(fn, nn::join(prefix, "stage" + std::to_string(i + 1)));
    }
    head_.visit_parameters(fn, nn::join(prefix, "head"));
  }

 private:
  int channels_;
  std::array<nn::ConvBlock, 3> stages_;
  nn::Head head_;
};

enum class Resample { kUp, kDown };

/// Bilinear x2/x4 resampling of a cue feature or cue prediction.
inline Tensor resample_cue(const Tensor& x, Resample direction, int factor) {
  if (factor != 2 && factor != 4) throw ValidationError("resample_cue: factor must be 2 or 4");
  return direction == Resample::kUp ? ops::upsample(x, factor) : ops::downsample(x, factor);
}

}  // namespace aglnet
