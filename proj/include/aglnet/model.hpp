#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>

#include "aglnet/aig.hpp"
#include "aglnet/backbone.hpp"
#include "aglnet/hfc.hpp"
#include "aglnet/rd.hpp"

namespace aglnet {

/// Architecture switches and sizes. The four booleans are the component
/// columns of the ablation table (the baseline is always present).
struct ModelConfig {
  BackboneId backbone = BackboneId::kTiny;
  std::optional<std::string> backbone_weights;
  int channels = 64;
  bool aig = true;
  bool combination = true;
  bool decoupling = true;
  bool rd = true;
  RdConfig rd_config;
  std::uint64_t seed = 0;
};

/// r^s plus the coarse-to-fine object predictions, all logits at their
/// native strides.
struct PredictionSet {
  Tensor r_s;
  Tensor r4;
  Tensor r3;
  Tensor r2;
  Tensor r1;
};

struct ModelOutputs {
  FeaturePyramid backbone;
  ProjectedPyramid projected;
  Tensor cue_feature;
  HfcOutputs hfc;
  PredictionSet predictions;
};

class AGLNet : public nn::Module {
 public:
  explicit AGLNet(const ModelConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
    if (cfg.channels < 1) throw ValidationError("model.channels must be >= 1");
    backbone_ = make_backbone(cfg.backbone, rng_, cfg.backbone_weights);
    projection_ = std::make_unique<PyramidProjection>(backbone_->raw_channels(), cfg.channels, rng_);
    aig_ = std::make_unique<AdditionalInfoGenerator>(cfg.channels, rng_);
    hfc_ = std::make_unique<HierarchicalFeatureCombination>(
        cfg.channels, HfcSwitches{cfg.combination, cfg.decoupling}, rng_);
    rd_ = std::make_unique<RecalibrationDecoder>(cfg.rd_config, cfg.channels, rng_);
  }

  [[nodiscard]] ModelOutputs forward(const Tensor& image, std::array<FRTrace, 3>* fr_traces = nullptr) const {
    require_divisible_input(image, 32, "model");
    ModelOutputs out;
    out.backbone = backbone_->extract(image);
    out.projected = projection_->forward(out.backbone);
    const Shape& s = image.shape();
    if (cfg_.aig) {
      CueOutput cue = aig_->forward(image);
      out.cue_feature = cue.feature;
      out.predictions.r_s = cue.prediction;
    } else {
      // Zero cue inputs without AIG.
      out.cue_feature = Tensor({s.n, cfg_.channels, s.h / 8, s.w / 8});
      out.predictions.r_s = Tensor({s.n, 1, s.h / 8, s.w / 8});
    }
    out.hfc = hfc_->forward(out.projected, out.cue_feature);
    out.predictions.r4 = out.hfc.decoupled.r4;
    if (cfg_.rd) {
      RefinedPredictions refined = rd_->forward(out.projected, out.predictions.r4, out.predictions.r_s, fr_traces);
      out.predictions.r3 = refined.r3;
      out.predictions.r2 = refined.r2;
      out.predictions.r1 = refined.r1;
    } else {
      out.predictions.r3 = out.predictions.r4;
      out.predictions.r2 = out.predictions.r4;
      out.predictions.r1 = out.predictions.r4;
    }
    return out;
  }

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }

  void visit_parameters(const nn::ParameterVisitor& fn, const std::string& prefix) override {
    backbone_->visit_parameters(fn, nn::join(prefix, "backbone"));
    projection_->visit_parameters(fn, nn::join(prefix, "projection"));
    if (cfg_.aig) aig_->visit_parameters(fn, nn::join(prefix, "aig"));
    hfc_->visit_parameters(fn, nn::join(prefix, "hfc"));
    if (cfg_.rd) rd_->visit_parameters(fn, nn::join(prefix, "rd"));
  }

 private:
  ModelConfig cfg_;
  std::mt19937_64 rng_;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<PyramidProjection> projection_;
  std::unique_ptr<AdditionalInfoGenerator> aig_;
  std::unique_ptr<HierarchicalFeatureCombination> hfc_;
  std::unique_ptr<RecalibrationDecoder> rd_;
};

}  // namespace aglnet
