#pragma once

// Hierarchical feature combination: MFC enhancement of each pyramid level,
// the multiplicative cascade, cue integration into the combined feature S and
// the dual-branch decoupling that yields d_1..d_3 and the initial prediction.

#include <array>
#include <random>
#include <string>

#include "aglnet/aig.hpp"
#include "aglnet/backbone.hpp"
#include "aglnet/nn.hpp"

namespace aglnet {

/// 1x1 conv, then parallel 5x5 and 7x7 convs summed, then a 3x3 conv.
class MfcBlock : public nn::Module {
 public:
  MfcBlock(int channels, std::mt19937_64& rng)
      : channels_(channels),
        reduce_(channels, channels, 1, rng),
        branch5_(channels, channels, 5, rng),
        branch7_(channels, channels, 7, rng),
        fuse_(channels, channels, 3, rng) {}

  [[nodiscard]] Tensor forward(const Tensor& x) const {
    if (x.shape().c != channels_) {
      throw ValidationError("mfc_block: expected width " + std::to_string(channels_) + ", got " + to_string(x.shape()));
    }
    Tensor r = reduce_.forward(x);
    return fuse_.forward(ops::add(branch5_.forward(r), branch7_.forward(r)));
  }

  void visit_parameters(const nn::ParameterVisitor& fn, const std::string& prefix) override {
    reduce_.visit_parameters(fn, nn::join(prefix, "reduce"));
    branch5_.visit_parameters(fn, nn::join(prefix, "branch5"));
    branch7_.visit_parameters(fn, nn::join(prefix, "branch7"));
    fuse_.visit_parameters(fn, nn::join(prefix, "fuse"));
  }

 private:
  int channels_;
  nn::ConvBlock reduce_;
  nn::ConvBlock branch5_;
  nn::ConvBlock branch7_;
  nn::ConvBlock fuse_;
};

struct CascadeOutputs {
  Tensor g1;  // stride 8
  Tensor g2;  // stride 16
  Tensor g3;  // stride 32
};

inline void require_stride_chain(const Tensor& fine, const Tensor& coarse, int factor, const char* who) {
  const Shape& f = fine.shape();
  const Shape& c = coarse.shape();
  if (f.n != c.n || f.h != c.h * factor || f.w != c.w * factor) {
    throw ValidationError(std::string(who) + ": stride mismatch between " + to_string(f) + " and " + to_string(c));
  }
}

/// g3 = X3;  g2 = X2 ⊗ up2(g3);  g1 = X1 ⊗ up2(g2) ⊗ up2(X2) ⊗ up4(g3).
inline CascadeOutputs cascade_combine(const std::array<Tensor, 3>& enhanced) {
  const Tensor& x1 = enhanced[0];
  const Tensor& x2 = enhanced[1];
  const Tensor& x3 = enhanced[2];
  require_stride_chain(x1, x2, 2, "cascade_combine");
  require_stride_chain(x2, x3, 2, "cascade_combine");
  if (x1.shape().c != x2.shape().c || x2.shape().c != x3.shape().c) {
    throw ValidationError("cascade_combine: level widths differ");
  }
  CascadeOutputs g;
  g.g3 = x3;
  g.g2 = ops::mul(x2, ops::upsample(g.g3, 2));
  g.g1 = ops::mul(ops::mul(ops::mul(x1, ops::upsample(g.g2, 2)), ops::upsample(x2, 2)), ops::upsample(g.g3, 4));
  return g;
}

struct CombinedFeature {
  Tensor s3;  // C,  stride 32
  Tensor s2;  // 2C, stride 16
  Tensor s1;  // 3C, stride 8
  Tensor s;   // 3C, stride 8
};

/// Folds the cue feature A into the cascade. Coarser S_k are upsampled x2
/// before they join the next concatenation.
class CueIntegration : public nn::Module {
 public:
  CueIntegration(int channels, std::mt19937_64& rng)
      : channels_(channels),
        s3_(2 * channels, channels, 3, rng),
        s2_(3 * channels, 2 * channels, 3, rng),
        s1_(4 * channels, 3 * channels, 3, rng),
        s_(3 * channels, 3 * channels, 3, rng) {}

  [[nodiscard]] CombinedFeature forward(const CascadeOutputs& g, const Tensor& cue_feature) const {
    require_stride_chain(cue_feature, g.g3, 4, "integrate_cue");
    require_stride_chain(cue_feature, g.g2, 2, "integrate_cue");
    require_stride_chain(cue_feature, g.g1, 1, "integrate_cue");
    CombinedFeature out;
    out.s3 = s3_.forward(ops::concat_channels({ops::downsample(cue_feature, 4), g.g3}));
    out.s2 = s2_.forward(ops::concat_channels({ops::downsample(cue_feature, 2), g.g2, ops::upsample(out.s3, 2)}));
    out.s1 = s1_.forward(ops::concat_channels({cue_feature, g.g1, ops::upsample(out.s2, 2)}));
    out.s = s_.forward(out.s1);
    return out;
  }

  void visit_parameters(const nn::ParameterVisitor& fn, const std::string& prefix) override {
    s3_.visit_parameters(fn, nn::join(prefix, "s3"));
    s2_.visit_parameters(fn, nn::join(prefix, "s2"));
    s1_.visit_parameters(fn, nn::join(prefix, "s1"));
    s_.visit_parameters(fn, nn::join(prefix, "s"));
  }

 private:
  int channels_;
  nn::ConvBlock s3_;
  nn::ConvBlock s2_;
  nn::ConvBlock s1_;
  nn::ConvBlock s_;
};

struct DecoupledFeatures {
  std::array<Tensor, 3> d;
  Tensor weights;  // (B, 3C, 1, 1), softmax over all 3C channels
  Tensor r4;       // (B, 1, H/8, W/8), logits
};

/// Branch 1 splits S into three C-wide groups and convolves each; branch 2
/// pools S globally and learns one softmax weight per channel. Each weighted
/// group is fused with A, and a 1x1 head on [d1,d2,d3] gives r_4.
class Decoupling : public nn::Module {
 public:
  Decoupling(int channels, std::mt19937_64& rng)
      : channels_(channels),
        group_convs_{nn::ConvBlock(channels, channels, 3, rng), nn::ConvBlock(channels, channels, 3, rng),
                     nn::ConvBlock(channels, channels, 3, rng)},
        weight_fc1_(3 * channels, 3 * channels, 1, 1, true, rng),
        weight_fc2_(3 * channels, 3 * channels, 1, 1, true, rng, 1.0),
        fuse_{nn::ConvBlock(2 * channels, channels, 3, rng), nn::ConvBlock(2 * channels, channels, 3, rng),
              nn::ConvBlock(2 * channels, channels, 3, rng)},
        head_(3 * channels, 1, rng) {}

  [[nodiscard]] DecoupledFeatures forward(const Tensor& s, const Tensor& cue_feature) const {
    if (s.shape().c % 3 != 0) throw ValidationError("decouple: width " + std::to_string(s.shape().c) + " not divisible by 3");
    if (s.shape().c != 3 * channels_) throw ValidationError("decouple: expected width 3C");
    require_stride_chain(s, cue_feature, 1, "decouple");
    DecoupledFeatures out;
    // No normalization on the pooled branch.
    Tensor hidden = ops::relu(weight_fc1_.forward(ops::global_avg_pool(s)));
    out.weights = ops::softmax_channels(weight_fc2_.forward(hidden));
    for (int i = 0; i < 3; ++i) {
      Tensor group = group_convs_[i].forward(ops::slice_channels(s, i * channels_, channels_));
      Tensor w = ops::slice_channels(out.weights, i * channels_, channels_);
      out.d[i] = fuse_[i].forward(ops::concat_channels({ops::mul(group, w), cue_feature}));
    }
    out.r4 = head_.forward(ops::concat_channels({out.d[0], out.d[1], out.d[2]}));
    return out;
  }

  void visit_parameters(const nn::ParameterVisitor& fn, const std::string& prefix) override {
    for (int i = 0; i < 3; ++i) group_convs_[i].visit_parameters(fn, nn::join(prefix, "group" + std::to_string(i + 1)));
    weight_fc1_.visit_parameters(fn, nn::join(prefix, "weight_fc1"));
    weight_fc2_.visit_parameters(fn, nn::join(prefix, "weight_fc2"));
    for (int i = 0; i < 3; ++i) fuse_[i].visit_parameters(fn, nn::join(prefix, "fuse" + std::to_string(i + 1)));
    head_.visit_parameters(fn, nn::join(prefix, "head"));
  }

  std::array<nn::ConvBlock, 3>& group_convs() { return group_convs_; }
  std::array<nn::ConvBlock, 3>& fuse_blocks() { return fuse_; }

 private:
  int channels_;
  std::array<nn::ConvBlock, 3> group_convs_;
  nn::Conv2d weight_fc1_;
  nn::Conv2d weight_fc2_;
  std::array<nn::ConvBlock, 3> fuse_;
  nn::Head head_;
};

struct HfcSwitches {
  bool combination = true;
  bool decoupling = true;
};

struct HfcOutputs {
  std::array<Tensor, 3> enhanced;  // X^c_i (empty when combination is off)
  CascadeOutputs cascade;          // empty when combination is off
  CombinedFeature combined;        // only `s` is set when combination is off
  DecoupledFeatures decoupled;     // only `r4` is set when decoupling is off
};

/// The HFC stage with the Combination/Decoupling ablation switches. With
/// Combination off, S comes from a plain top-down conv fusion of the
/// projected pyramid; with Decoupling off, r_4 is a 1x1 head on S.
class HierarchicalFeatureCombination : public nn::Module {
 public:
  HierarchicalFeatureCombination(int channels, HfcSwitches switches, std::mt19937_64& rng)
      : channels_(channels),
        switches_(switches),
        mfc_{MfcBlock(channels, rng), MfcBlock(channels, rng), MfcBlock(channels, rng)},
        integration_(channels, rng),
        topdown2_(2 * channels, channels, 3, rng),
        topdown1_(2 * channels, channels, 3, rng),
        topdown_s_(2 * channels, 3 * channels, 3, rng),
        decoupling_(channels, rng),
        plain_head_(3 * channels, 1, rng) {}

  [[nodiscard]] HfcOutputs forward(const ProjectedPyramid& pyr, const Tensor& cue_feature) const {
    HfcOutputs out;
    if (switches_.combination) {
      for (std::size_t i = 0; i < 3; ++i) out.enhanced[i] = mfc_[i].forward(pyr.levels[i]);
      out.cascade = cascade_combine(out.enhanced);
      out.combined = integration_.forward(out.cascade, cue_feature);
    } else {
      Tensor f3 = pyr.levels[2];
      Tensor f2 = topdown2_.forward(ops::concat_channels({pyr.levels[1], ops::upsample(f3, 2)}));
      Tensor f1 = topdown1_.forward(ops::concat_channels({pyr.levels[0], ops::upsample(f2, 2)}));
      out.combined.s = topdown_s_.forward(ops::concat_channels({f1, cue_feature}));
    }
    if (switches_.decoupling) {
      out.decoupled = decoupling_.forward(out.combined.s, cue_feature);
    } else {
      out.decoupled.r4 = plain_head_.forward(out.combined.s);
    }
    return out;
  }

  void visit_parameters(const nn::ParameterVisitor& fn, const std::string& prefix) override {
    if (switches_.combination) {
      for (int i = 0; i < 3; ++i) mfc_[i].visit_parameters(fn, nn::join(prefix, "mfc" + std::to_string(i + 1)));
      integration_.visit_parameters(fn, nn::join(prefix, "integration"));
    } else {
      topdown2_.visit_parameters(fn, nn::join(prefix, "topdown2"));
      topdown1_.visit_parameters(fn, nn::join(prefix, "topdown1"));
      topdown_s_.visit_parameters(fn, nn::join(prefix, "topdown_s"));
    }
    if (switches_.decoupling) {
      decoupling_.visit_parameters(fn, nn::join(prefix, "decoupling"));
    } else {
      plain_head_.visit_parameters(fn, nn::join(prefix, "head"));
    }
  }

 private:
  int channels_;
  HfcSwitches switches_;
  std::array<MfcBlock, 3> mfc_;
  CueIntegration integration_;
  nn::ConvBlock topdown2_;
  nn::ConvBlock topdown1_;
  nn::ConvBlock topdown_s_;
  Decoupling decoupling_;
  nn::Head plain_head_;
};

}  // namespace aglnet
