#pragma once

// Recalibration decoder: one feature refiner (FR) per pyramid level, applied
// coarse to fine. Each FR runs a chain of split-and-merge stages; stage j
// projects to n_j * C / 2^e channels with a 1x1 conv, splits the result into
// n_j groups and merges each group with the previous prediction and the cue
// prediction, adding 2^(n_j + 1) auxiliary channels in total.

#include <array>
#include <random>
#include <string>
#include <vector>

#include "aglnet/backbone.hpp"
#include "aglnet/nn.hpp"

namespace aglnet {

struct FRConfig {
  int level = 1;                          // 1 (stride 8) .. 3 (stride 32)
  int q_exponent = 0;                     // group width is C / 2^q_exponent
  std::vector<int> split_counts{4, 3, 2}; // n per stage
  int iterations = 3;

  void validate(int channels) const {
    if (level < 1 || level > 3) throw ValidationError("FRConfig: level must be 1, 2 or 3");
    if (q_exponent < 0) throw ValidationError("FRConfig: negative q exponent");
    if (iterations < 1) throw ValidationError("FRConfig: iterations must be >= 1");
    if (split_counts.empty()) throw ValidationError("FRConfig: no split stages");
    for (std::size_t i = 0; i < split_counts.size(); ++i) {
      if (split_counts[i] < 1) throw ValidationError("FRConfig: split counts must be positive");
      if (i > 0 && split_counts[i] >= split_counts[i - 1]) {
        throw ValidationError("FRConfig: split counts must be strictly decreasing");
      }
    }
    if (channels % (1 << q_exponent) != 0) {
      throw ValidationError("FRConfig: width " + std::to_string(channels) + " not divisible by 2^" +
                            std::to_string(q_exponent));
    }
  }
};

/// Channel bookkeeping of one split-and-merge stage.
struct StageLedger {
  int conv_in = 0;
  int conv_out = 0;      // n * C / 2^q
  int aux = 0;           // 2^(n+1)
  int concat_out = 0;    // conv_out + aux
  int groups = 0;        // n
};

/// Width of the FR input after the entry projection (n_1 * C).
inline int fr_entry_width(const FRConfig& cfg, int channels) { return cfg.split_counts.front() * channels; }

inline std::vector<StageLedger> fr_ledger(const FRConfig& cfg, int channels) {
  cfg.validate(channels);
  const int group_width = channels >> cfg.q_exponent;
  std::vector<StageLedger> ledger;
  int in = fr_entry_width(cfg, channels);
  for (int n : cfg.split_counts) {
    StageLedger st;
    st.groups = n;
    st.conv_in = in;
    st.conv_out = n * group_width;
    st.aux = 1 << (n + 1);
    st.concat_out = st.conv_out + st.aux;
    ledger.push_back(st);
    in = st.concat_out;
  }
  return ledger;
}

/// Auxiliary channels given to group g of n: the 2^(n+1) total is spread as
/// evenly as possible, earlier groups taking the remainder (n=3: 6,5,5).
inline int aux_channels_for_group(int total, int groups, int g) {
  return total / groups + (g < total % groups ? 1 : 0);
}

/// Per-stage channel widths observed during a forward pass.
struct FRTrace {
  int entry_width = 0;
  std::vector<StageLedger> stages;
};

class FeatureRefiner : public nn::Module {
 public:
  FeatureRefiner(FRConfig cfg, int channels, std::mt19937_64& rng)
      : cfg_(std::move(cfg)), channels_(channels), ledger_(fr_ledger(cfg_, channels)),
        entry_(channels, fr_entry_width(cfg_, channels), 1, rng),
        head_(ledger_.back().concat_out, 1, rng) {
    for (const auto& st : ledger_) stage_convs_.emplace_back(st.conv_in, st.conv_out, 1, rng);
  }

  /// x: projected backbone feature at this level (C wide); r_prev and r_s may
  /// be at any stride and are resampled bilinearly to x's grid.
  [[nodiscard]] Tensor forward(const Tensor& x, const Tensor& r_prev, const Tensor& r_s,
                               FRTrace* trace = nullptr) const {
    if (x.shape().c != channels_) {
      throw ValidationError("fr_forward: expected width " + std::to_string(channels_) + ", got " + to_string(x.shape()));
    }
    const int h = x.shape().h;
    const int w = x.shape().w;
    const Tensor cue = ops::resize_bilinear(r_s, h, w);
    Tensor prediction = ops::resize_bilinear(r_prev, h, w);
    const Tensor entry = entry_.forward(x);
    if (trace) {
      trace->entry_width = entry.shape().c;
      trace->stages.clear();
    }
    for (int it = 0; it < cfg_.iterations; ++it) {
      Tensor feat = entry;
      for (std::size_t j = 0; j < ledger_.size(); ++j) {
        const StageLedger& st = ledger_[j];
        const int in_width = feat.shape().c;
        Tensor projected = stage_convs_[j].forward(feat);
        const int group_width = st.conv_out / st.groups;
        std::vector<Tensor> parts;
        for (int g = 0; g < st.groups; ++g) {
          parts.push_back(ops::slice_channels(projected, g * group_width, group_width));
          const int aux = aux_channels_for_group(st.aux, st.groups, g);
          for (int a = 0; a < aux; ++a) parts.push_back(a % 2 == 0 ? prediction : cue);
        }
        feat = ops::concat_channels(parts);
        if (trace && it == 0) {
          StageLedger seen = st;
          seen.conv_in = in_width;
          seen.conv_out = projected.shape().c;
          seen.concat_out = feat.shape().c;
          trace->stages.push_back(seen);
        }
      }
      prediction = head_.forward(feat);
    }
    return prediction;
  }

  [[nodiscard]] const FRConfig& config() const { return cfg_; }
  [[nodiscard]] const std::vector<StageLedger>& ledger() const { return ledger_; }

  void visit_parameters(const nn::ParameterVisitor& fn, const std::string& prefix) override {
    entry_.visit_parameters(fn, nn::join(prefix, "entry"));
    for (std::size_t j = 0; j < stage_convs_.size(); ++j) {
      stage_convs_[j].visit_parameters(fn, nn::join(prefix, "stage" + std::to_string(j + 1)));
    }
    head_.visit_parameters(fn, nn::join(prefix, "head"));
  }

 private:
  FRConfig cfg_;
  int channels_;
  std::vector<StageLedger> ledger_;
  nn::ConvBlock entry_;
  std::vector<nn::ConvBlock> stage_convs_;
  nn::Head head_;
};

struct RdConfig {
  std::vector<int> split_counts{4, 3, 2};
  std::array<int, 3> q_exponents{2, 1, 0};  // for FR_3, FR_2, FR_1
  int iterations = 3;
};

struct RefinedPredictions {
  Tensor r3;  // stride 32
  Tensor r2;  // stride 16
  Tensor r1;  // stride 8
};

class RecalibrationDecoder : public nn::Module {
 public:
  RecalibrationDecoder(const RdConfig& cfg, int channels, std::mt19937_64& rng)
      : refiners_{FeatureRefiner({3, cfg.q_exponents[0], cfg.split_counts, cfg.iterations}, channels, rng),
                  FeatureRefiner({2, cfg.q_exponents[1], cfg.split_counts, cfg.iterations}, channels, rng),
                  FeatureRefiner({1, cfg.q_exponents[2], cfg.split_counts, cfg.iterations}, channels, rng)} {}

  /// r3 = FR3(X3, r4, rs);  r2 = FR2(X2, r3, rs);  r1 = FR1(X1, r2, rs).
  [[nodiscard]] RefinedPredictions forward(const ProjectedPyramid& pyr, const Tensor& r4, const Tensor& r_s,
                                           std::array<FRTrace, 3>* traces = nullptr) const {
    RefinedPredictions out;
    out.r3 = refiners_[0].forward(pyr.levels[2], r4, r_s, traces ? &(*traces)[0] : nullptr);
    out.r2 = refiners_[1].forward(pyr.levels[1], out.r3, r_s, traces ? &(*traces)[1] : nullptr);
    out.r1 = refiners_[2].forward(pyr.levels[0], out.r2, r_s, traces ? &(*traces)[2] : nullptr);
    return out;
  }

  /// FR_3, FR_2, FR_1 in application order.
  [[nodiscard]] const std::array<FeatureRefiner, 3>& refiners() const { return refiners_; }

  void visit_parameters(const nn::ParameterVisitor& fn, const std::string& prefix) override {
    refiners_[0].visit_parameters(fn, nn::join(prefix, "fr3"));
    refiners_[1].visit_parameters(fn, nn::join(prefix, "fr2"));
    refiners_[2].visit_parameters(fn, nn::join(prefix, "fr1"));
  }

 private:
  std::array<FeatureRefiner, 3> refiners_;
};

}  // namespace aglnet
