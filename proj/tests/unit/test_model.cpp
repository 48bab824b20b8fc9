#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "aglnet/gradcheck.hpp"
#include "aglnet/losses.hpp"
#include "aglnet/model.hpp"

using namespace aglnet;

namespace {

Tensor random_tensor(const Shape& s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(s.numel());
  for (double& x : v) x = u(rng);
  return Tensor(s, std::move(v));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

bool all_finite(const Tensor& a) {
  for (double v : a.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor channel_slice(const Tensor& t, int start, int count) {
  NoGradGuard g;
  return ops::slice_channels(t, start, count);
}

Tensor probe_loss(const Tensor& t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> c(t.numel());
  for (double& x : c) x = u(rng);
  return ops::dot_constant(t, c);
}

}  // namespace

// ---------------------------------------------------------------------------
// Backbone and projection

TEST(Backbone, FullResolutionGivesStride8To32Levels) {
  std::mt19937_64 rng(1);
  const auto bb = make_backbone(BackboneId::kTiny, rng);
  NoGradGuard g;
  const FeaturePyramid p = bb->extract(Tensor({1, 3, 704, 704}, 0.5));
  EXPECT_EQ(p.levels[0].shape(), (Shape{1, 32, 88, 88}));
  EXPECT_EQ(p.levels[1].shape(), (Shape{1, 48, 44, 44}));
  EXPECT_EQ(p.levels[2].shape(), (Shape{1, 64, 22, 22}));
}

TEST(Backbone, ToyInputAndBatchIndependence) {
  std::mt19937_64 rng(2);
  const auto bb = make_backbone(BackboneId::kTiny, rng);
  const Tensor one = random_tensor({1, 3, 64, 64}, 3, 0.0, 1.0);
  std::vector<double> twice(one.data().begin(), one.data().end());
  twice.insert(twice.end(), one.data().begin(), one.data().end());
  const Tensor two({2, 3, 64, 64}, std::move(twice));
  NoGradGuard g;
  const FeaturePyramid p = bb->extract(two);
  const std::array<int, 3> sides{8, 4, 2};
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(p.levels[i].shape().h, sides[i]);
    const auto s = p.levels[i].shape();
    const auto v = p.levels[i].data();
    for (std::size_t k = 0; k < s.numel() / 2; ++k) EXPECT_EQ(v[k], v[k + s.numel() / 2]);
  }
}

TEST(Backbone, RejectsBadInputsAndUnknownIds) {
  std::mt19937_64 rng(3);
  const auto bb = make_backbone(BackboneId::kTiny, rng);
  EXPECT_THROW((void)bb->extract(Tensor({1, 3, 48, 64})), ValidationError);
  EXPECT_THROW((void)bb->extract(Tensor({1, 1, 64, 64})), ValidationError);
  EXPECT_THROW(parse_backbone_id("vgg"), ValidationError);
  EXPECT_EQ(parse_backbone_id("efficientnet_b4"), BackboneId::kEfficientNetB4);
  EXPECT_THROW(make_backbone(BackboneId::kResNet50, rng), std::runtime_error);
}

TEST(Projection, SetsSharedWidthAndKeepsSpatialSize) {
  std::mt19937_64 rng(4);
  PyramidProjection proj({32, 48, 64}, 8, rng);
  FeaturePyramid pyr;
  pyr.levels = {random_tensor({2, 32, 8, 8}, 1), random_tensor({2, 48, 4, 4}, 2), random_tensor({2, 64, 2, 2}, 3)};
  const ProjectedPyramid out = proj.forward(pyr);
  EXPECT_EQ(out.levels[0].shape(), (Shape{2, 8, 8, 8}));
  EXPECT_EQ(out.levels[1].shape(), (Shape{2, 8, 4, 4}));
  EXPECT_EQ(out.levels[2].shape(), (Shape{2, 8, 2, 2}));
}

TEST(Projection, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  PyramidProjection proj({3, 4, 5}, 4, rng);
  FeaturePyramid pyr;
  pyr.levels = {random_tensor({1, 3, 4, 4}, 6), random_tensor({1, 4, 4, 4}, 7), random_tensor({1, 5, 4, 4}, 8)};
  auto loss = [&] {
    const ProjectedPyramid p = proj.forward(pyr);
    return ops::add_n({probe_loss(p.levels[0], 1), probe_loss(p.levels[1], 2), probe_loss(p.levels[2], 3)});
  };
  const auto res = grad_check(loss, proj.named_parameters());
  EXPECT_GE(res.kink_margin, 1e-6);
  EXPECT_TRUE(res.ok()) << res.worst;
}

// ---------------------------------------------------------------------------
// AIG

TEST(Aig, ToyShapes) {
  std::mt19937_64 rng(6);
  AdditionalInfoGenerator aig(8, rng);
  const CueOutput out = aig.forward(random_tensor({2, 3, 64, 64}, 1, 0.0, 1.0));
  EXPECT_EQ(out.feature.shape(), (Shape{2, 8, 8, 8}));
  EXPECT_EQ(out.prediction.shape(), (Shape{2, 1, 8, 8}));
  EXPECT_THROW((void)aig.forward(Tensor({1, 3, 20, 24})), ValidationError);
}

TEST(Aig, FullResolutionFeature) {
  std::mt19937_64 rng(7);
  AdditionalInfoGenerator aig(64, rng);
  NoGradGuard g;
  const CueOutput out = aig.forward(Tensor({1, 3, 704, 704}, 0.25));
  EXPECT_EQ(out.feature.shape(), (Shape{1, 64, 88, 88}));
}

TEST(Aig, CueMseGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(8);
  AdditionalInfoGenerator aig(4, rng);
  const Tensor image = random_tensor({1, 3, 16, 16}, 9, 0.0, 1.0);
  const Tensor target = random_tensor({1, 1, 16, 16}, 10, 0.0, 1.0);
  auto loss = [&] { return losses::cue_mse(ops::resize_bilinear(aig.forward(image).prediction, 16, 16), target); };
  GradCheckOptions opt;
  opt.max_per_tensor = 40;
  const auto res = grad_check(loss, aig.named_parameters(), opt);
  EXPECT_GE(res.kink_margin, 1e-6);
  EXPECT_TRUE(res.ok()) << res.worst;
}

TEST(ResampleCue, ConstantsAndSizes) {
  const Tensor c({1, 2, 8, 8}, 0.7);
  const Tensor up = resample_cue(c, Resample::kUp, 4);
  EXPECT_EQ(up.shape(), (Shape{1, 2, 32, 32}));
  for (double v : up.data()) EXPECT_NEAR(v, 0.7, 1e-15);
  EXPECT_EQ(resample_cue(Tensor({1, 1, 88, 88}), Resample::kDown, 4).shape(), (Shape{1, 1, 22, 22}));
  EXPECT_THROW(resample_cue(c, Resample::kUp, 3), ValidationError);
  EXPECT_THROW(resample_cue(Tensor({1, 1, 6, 6}), Resample::kDown, 4), ValidationError);
}

TEST(ResampleCue, SmoothMapSurvivesDownUp) {
  Tensor x({1, 1, 32, 32});
  for (int y = 0; y < 32; ++y) {
    for (int xx = 0; xx < 32; ++xx) x.data()[y * 32 + xx] = 1.0 + 0.5 * std::sin(0.15 * y) * std::cos(0.1 * xx);
  }
  const Tensor back = resample_cue(resample_cue(x, Resample::kDown, 2), Resample::kUp, 2);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    num += std::pow(back.data()[i] - x.data()[i], 2);
    den += std::pow(x.data()[i], 2);
  }
  EXPECT_LT(std::sqrt(num / den), 0.05);
}

TEST(ResampleCue, IsLinear) {
  const Tensor a = random_tensor({1, 3, 8, 8}, 11);
  const Tensor b = random_tensor({1, 3, 8, 8}, 12);
  const Tensor lhs = resample_cue(ops::add(ops::scale(a, 2.0), ops::scale(b, -0.5)), Resample::kUp, 2);
  const Tensor rhs =
      ops::add(ops::scale(resample_cue(a, Resample::kUp, 2), 2.0), ops::scale(resample_cue(b, Resample::kUp, 2), -0.5));
  EXPECT_LE(max_abs_diff(lhs, rhs), 1e-12);
}

// ---------------------------------------------------------------------------
// HFC

TEST(Mfc, KeepsShapeAndMapsZeroToZero) {
  std::mt19937_64 rng(13);
  MfcBlock mfc(4, rng);
  const Tensor out = mfc.forward(random_tensor({2, 4, 8, 8}, 1));
  EXPECT_EQ(out.shape(), (Shape{2, 4, 8, 8}));
  EXPECT_EQ(max_abs(mfc.forward(Tensor({1, 4, 8, 8}))), 0.0);
  EXPECT_THROW((void)mfc.forward(Tensor({1, 5, 8, 8})), ValidationError);
}

TEST(Cascade, OnesStayOnesAndZeroPropagates) {
  const CascadeOutputs ones = cascade_combine({Tensor({1, 3, 8, 8}, 1.0), Tensor({1, 3, 4, 4}, 1.0), Tensor({1, 3, 2, 2}, 1.0)});
  for (const Tensor* g : {&ones.g1, &ones.g2, &ones.g3}) {
    for (double v : g->data()) EXPECT_NEAR(v, 1.0, 1e-15);
  }
  const CascadeOutputs zero =
      cascade_combine({random_tensor({1, 3, 8, 8}, 1), random_tensor({1, 3, 4, 4}, 2), Tensor({1, 3, 2, 2})});
  EXPECT_EQ(max_abs(zero.g2), 0.0);
  EXPECT_EQ(max_abs(zero.g1), 0.0);
  EXPECT_THROW(cascade_combine({Tensor({1, 3, 8, 8}), Tensor({1, 3, 3, 3}), Tensor({1, 3, 2, 2})}), ValidationError);
}

TEST(CueIntegration, LedgerAndSpatialSizes) {
  std::mt19937_64 rng(14);
  CueIntegration integ(4, rng);
  const CascadeOutputs g{random_tensor({1, 4, 8, 8}, 1), random_tensor({1, 4, 4, 4}, 2), random_tensor({1, 4, 2, 2}, 3)};
  const CombinedFeature s = integ.forward(g, random_tensor({1, 4, 8, 8}, 4));
  EXPECT_EQ(s.s3.shape(), (Shape{1, 4, 2, 2}));
  EXPECT_EQ(s.s2.shape(), (Shape{1, 8, 4, 4}));
  EXPECT_EQ(s.s1.shape(), (Shape{1, 12, 8, 8}));
  EXPECT_EQ(s.s.shape(), (Shape{1, 12, 8, 8}));
  EXPECT_THROW((void)integ.forward(g, Tensor({1, 4, 4, 4})), ValidationError);
}

TEST(Decoupling, WeightsFormASoftmaxAndShapesFollowTheLedger) {
  std::mt19937_64 rng(15);
  Decoupling dec(4, rng);
  const DecoupledFeatures d = dec.forward(random_tensor({2, 12, 8, 8}, 1), random_tensor({2, 4, 8, 8}, 2));
  EXPECT_EQ(d.weights.shape(), (Shape{2, 12, 1, 1}));
  for (int n = 0; n < 2; ++n) {
    double sum = 0.0;
    for (int c = 0; c < 12; ++c) {
      const double w = d.weights.data()[n * 12 + c];
      EXPECT_GE(w, 0.0);
      sum += w;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  for (const auto& di : d.d) EXPECT_EQ(di.shape(), (Shape{2, 4, 8, 8}));
  EXPECT_EQ(d.r4.shape(), (Shape{2, 1, 8, 8}));
  EXPECT_THROW((void)dec.forward(Tensor({1, 13, 8, 8}), Tensor({1, 4, 8, 8})), ValidationError);
}

TEST(Decoupling, PermutingGroupsPermutesOutputs) {
  const int c = 3;
  std::mt19937_64 rng(16);
  Decoupling dec(c, rng);
  // Shared initialisation across the three branches.
  auto params = dec.named_parameters();
  auto find = [&](const std::string& name) -> Tensor& {
    for (auto& [n, t] : params) {
      if (n == name) return t;
    }
    throw std::runtime_error("missing " + name);
  };
  for (const std::string kind : {"group", "fuse"}) {
    for (const std::string leaf : {"conv.weight", "norm.gamma", "norm.beta"}) {
      const Tensor src = find(kind + "1." + leaf);
      for (int i = 2; i <= 3; ++i) {
        Tensor dst = find(kind + std::to_string(i) + "." + leaf);
        std::copy(src.data().begin(), src.data().end(), dst.data().begin());
      }
    }
  }
  const std::array<int, 3> perm{2, 0, 1};  // new group k takes old group perm[k]
  const Tensor s = random_tensor({1, 3 * c, 4, 4}, 5);
  const Tensor a = random_tensor({1, c, 4, 4}, 6);
  std::vector<Tensor> groups;
  for (int k = 0; k < 3; ++k) groups.push_back(channel_slice(s, perm[k] * c, c));
  const Tensor s_perm = ops::concat_channels(groups);
  auto channel_map = [&](int ch) { return perm[ch / c] * c + ch % c; };

  const DecoupledFeatures ref = dec.forward(s, a);
  // Permute fc1 input columns and fc2 output rows to match.
  Tensor& w1 = find("weight_fc1.weight");
  Tensor& w2 = find("weight_fc2.weight");
  Tensor& b2 = find("weight_fc2.bias");
  const std::vector<double> w1o(w1.data().begin(), w1.data().end());
  const std::vector<double> w2o(w2.data().begin(), w2.data().end());
  const std::vector<double> b2o(b2.data().begin(), b2.data().end());
  const int wc = 3 * c;
  for (int o = 0; o < wc; ++o) {
    for (int i = 0; i < wc; ++i) {
      w1.data()[o * wc + i] = w1o[o * wc + channel_map(i)];
      w2.data()[o * wc + i] = w2o[channel_map(o) * wc + i];
    }
    b2.data()[o] = b2o[channel_map(o)];
  }
  const DecoupledFeatures got = dec.forward(s_perm, a);
  for (int k = 0; k < 3; ++k) EXPECT_LE(max_abs_diff(got.d[k], ref.d[perm[k]]), 1e-12) << "group " << k;
}

TEST(Hfc, DeterministicAndSwitchable) {
  std::mt19937_64 rng(17);
  HierarchicalFeatureCombination hfc(4, {}, rng);
  ProjectedPyramid pyr;
  pyr.levels = {random_tensor({1, 4, 8, 8}, 1), random_tensor({1, 4, 4, 4}, 2), random_tensor({1, 4, 2, 2}, 3)};
  const Tensor a = random_tensor({1, 4, 8, 8}, 4);
  EXPECT_EQ(max_abs_diff(hfc.forward(pyr, a).decoupled.r4, hfc.forward(pyr, a).decoupled.r4), 0.0);
  for (bool comb : {false, true}) {
    for (bool dec : {false, true}) {
      std::mt19937_64 r2(18);
      HierarchicalFeatureCombination h(4, {comb, dec}, r2);
      const HfcOutputs out = h.forward(pyr, a);
      EXPECT_EQ(out.combined.s.shape(), (Shape{1, 12, 8, 8}));
      EXPECT_EQ(out.decoupled.r4.shape(), (Shape{1, 1, 8, 8}));
      EXPECT_TRUE(all_finite(out.decoupled.r4));
    }
  }
}

// ---------------------------------------------------------------------------
// RD

TEST(FeatureRefiner, StageOneWidthAtFullScale) {
  const auto ledger = fr_ledger(FRConfig{3, 2, {4, 3, 2}, 3}, 64);
  EXPECT_EQ(ledger[0].conv_in, 256);
  EXPECT_EQ(ledger[0].conv_out, 64);
  EXPECT_EQ(ledger[0].concat_out, 64 + 32);
}

TEST(FeatureRefiner, TraceFollowsTable) {
  const int c = 8;
  for (int q : {0, 1, 2}) {
    std::mt19937_64 rng(19);
    FeatureRefiner fr(FRConfig{1, q, {4, 3, 2}, 3}, c, rng);
    FRTrace trace;
    const Tensor out = fr.forward(random_tensor({1, c, 4, 4}, 1), random_tensor({1, 1, 2, 2}, 2),
                                  random_tensor({1, 1, 4, 4}, 3), &trace);
    EXPECT_EQ(out.shape(), (Shape{1, 1, 4, 4}));
    const int g = c >> q;
    // 4C -> 4g -> 4g+32 -> 3g -> 3g+16 -> 2g -> 2g+8.
    EXPECT_EQ(trace.entry_width, 4 * c);
    ASSERT_EQ(trace.stages.size(), 3u);
    EXPECT_EQ(trace.stages[0].conv_in, 4 * c);
    EXPECT_EQ(trace.stages[0].conv_out, 4 * g);
    EXPECT_EQ(trace.stages[0].concat_out, 4 * g + 32);
    EXPECT_EQ(trace.stages[1].conv_in, 4 * g + 32);
    EXPECT_EQ(trace.stages[1].conv_out, 3 * g);
    EXPECT_EQ(trace.stages[1].concat_out, 3 * g + 16);
    EXPECT_EQ(trace.stages[2].conv_in, 3 * g + 16);
    EXPECT_EQ(trace.stages[2].conv_out, 2 * g);
    EXPECT_EQ(trace.stages[2].concat_out, 2 * g + 8);
  }
}

TEST(FeatureRefiner, AuxiliaryBudgetIsSpreadEvenly) {
  for (int n = 1; n <= 6; ++n) {
    const int total = 1 << (n + 1);
    int sum = 0;
    int lo = total, hi = 0;
    for (int g = 0; g < n; ++g) {
      const int a = aux_channels_for_group(total, n, g);
      sum += a;
      lo = std::min(lo, a);
      hi = std::max(hi, a);
    }
    EXPECT_EQ(sum, total);
    EXPECT_LE(hi - lo, 1);
  }
}

TEST(FeatureRefiner, RejectsInvalidConfigs) {
  std::mt19937_64 rng(20);
  EXPECT_THROW(FeatureRefiner(FRConfig{1, 0, {3, 3}, 1}, 8, rng), ValidationError);
  EXPECT_THROW(FeatureRefiner(FRConfig{1, 2, {4, 3, 2}, 1}, 6, rng), ValidationError);
  EXPECT_THROW(FeatureRefiner(FRConfig{4, 0, {4, 3, 2}, 1}, 8, rng), ValidationError);
  EXPECT_THROW(FeatureRefiner(FRConfig{1, 0, {4, 3, 2}, 0}, 8, rng), ValidationError);
  FeatureRefiner ok(FRConfig{1, 0, {4, 3, 2}, 1}, 8, rng);
  EXPECT_THROW((void)ok.forward(Tensor({1, 4, 4, 4}), Tensor({1, 1, 2, 2}), Tensor({1, 1, 4, 4})), ValidationError);
}

TEST(Rd, CoarseToFineShapesForEveryIterationCount) {
  ProjectedPyramid pyr;
  pyr.levels = {random_tensor({1, 8, 8, 8}, 1), random_tensor({1, 8, 4, 4}, 2), random_tensor({1, 8, 2, 2}, 3)};
  for (int it = 1; it <= 4; ++it) {
    std::mt19937_64 rng(21);
    RecalibrationDecoder rd(RdConfig{{4, 3, 2}, {2, 1, 0}, it}, 8, rng);
    const RefinedPredictions r = rd.forward(pyr, Tensor({1, 1, 8, 8}), Tensor({1, 1, 8, 8}));
    EXPECT_EQ(r.r3.shape(), (Shape{1, 1, 2, 2}));
    EXPECT_EQ(r.r2.shape(), (Shape{1, 1, 4, 4}));
    EXPECT_EQ(r.r1.shape(), (Shape{1, 1, 8, 8}));
    EXPECT_TRUE(all_finite(r.r1));
  }
}

// ---------------------------------------------------------------------------
// Whole model

TEST(Model, ParameterNamesAreUniqueAndSwitchesPruneModules) {
  ModelConfig mc;
  mc.channels = 8;
  AGLNet full(mc);
  auto names = full.named_parameters();
  std::set<std::string> unique;
  for (const auto& [n, t] : names) unique.insert(n);
  EXPECT_EQ(unique.size(), names.size());
  EXPECT_TRUE(std::any_of(names.begin(), names.end(), [](const auto& p) { return p.first.rfind("aig.", 0) == 0; }));

  ModelConfig bare = mc;
  bare.aig = bare.rd = bare.combination = bare.decoupling = false;
  AGLNet base(bare);
  for (const auto& [n, t] : base.named_parameters()) {
    EXPECT_NE(n.rfind("aig.", 0), 0u) << n;
    EXPECT_NE(n.rfind("rd.", 0), 0u) << n;
  }
  EXPECT_LT(base.parameter_count(), full.parameter_count());
  const ModelOutputs out = base.forward(random_tensor({1, 3, 64, 64}, 1, 0.0, 1.0));
  EXPECT_EQ(max_abs(out.predictions.r_s), 0.0);
  EXPECT_EQ(max_abs_diff(out.predictions.r1, out.predictions.r4), 0.0);
}

TEST(Model, SameSeedSameWeightsSameOutputs) {
  ModelConfig mc;
  mc.channels = 4;
  mc.seed = 9;
  const AGLNet a(mc);
  const AGLNet b(mc);
  const Tensor img = random_tensor({2, 3, 64, 64}, 2, 0.0, 1.0);
  EXPECT_EQ(max_abs_diff(a.forward(img).predictions.r1, b.forward(img).predictions.r1), 0.0);
  EXPECT_THROW((void)a.forward(Tensor({1, 3, 48, 48})), ValidationError);
}

// ---------------------------------------------------------------------------
// Losses

TEST(Losses, StructureWeightsMatchBoxFilterOracle) {
  Tensor gt({1, 1, 40, 36});
  for (int y = 5; y < 20; ++y) {
    for (int x = 8; x < 30; ++x) gt.data()[y * 36 + x] = 1.0;
  }
  const Tensor w = losses::structure_weights(gt);
  for (int y = 0; y < 40; ++y) {
    for (int x = 0; x < 36; ++x) {
      double box = 0.0;
      for (int dy = -15; dy <= 15; ++dy) {
        for (int dx = -15; dx <= 15; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < 40 && xx >= 0 && xx < 36) box += gt.data()[yy * 36 + xx];
        }
      }
      const double want = 1.0 + 5.0 * std::abs(box / 961.0 - gt.data()[y * 36 + x]);
      EXPECT_NEAR(w.data()[y * 36 + x], want, 1e-12);
    }
  }
}

TEST(Losses, WeightsAreOneFarFromTheMask) {
  Tensor gt({1, 1, 80, 80});
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) gt.data()[y * 80 + x] = 1.0;
  }
  const Tensor w = losses::structure_weights(gt);
  for (double v : w.data()) EXPECT_GE(v, 1.0);
  EXPECT_EQ(w.data()[60 * 80 + 60], 1.0);
}

TEST(Losses, BceAnchors) {
  Tensor gt({1, 1, 8, 8});
  for (std::size_t i = 0; i < gt.numel(); i += 2) gt.data()[i] = 1.0;
  Tensor z({1, 1, 8, 8});
  for (std::size_t i = 0; i < z.numel(); ++i) z.data()[i] = gt.data()[i] > 0.5 ? 20.0 : -20.0;
  const Tensor ones({1, 1, 8, 8}, 1.0);
  EXPECT_LT(losses::weighted_bce(z, gt, ones).item(), 1e-8);
  EXPECT_NEAR(losses::weighted_bce(Tensor({1, 1, 8, 8}), gt, ones).item(), std::log(2.0), 1e-15);
}

TEST(Losses, HandComputedTwoByTwo) {
  const Tensor z({1, 1, 2, 2}, std::vector<double>{0.0, 2.0, -1.0, 0.5});
  const Tensor g({1, 1, 2, 2}, std::vector<double>{1.0, 1.0, 0.0, 0.0});
  const Tensor w({1, 1, 2, 2}, std::vector<double>{1.0, 2.0, 1.5, 1.0});
  const double p[4] = {0.5, 1.0 / (1.0 + std::exp(-2.0)), 1.0 / (1.0 + std::exp(1.0)), 1.0 / (1.0 + std::exp(-0.5))};
  const double bce[4] = {-std::log(p[0]), -std::log(p[1]), -std::log(1 - p[2]), -std::log(1 - p[3])};
  const double want_bce = (1.0 * bce[0] + 2.0 * bce[1] + 1.5 * bce[2] + 1.0 * bce[3]) / 5.5;
  EXPECT_NEAR(losses::weighted_bce(z, g, w).item(), want_bce, 1e-14);
  const double inter = 1.0 * p[0] + 2.0 * p[1];
  const double uni = 1.0 * (p[0] + 1) + 2.0 * (p[1] + 1) + 1.5 * p[2] + 1.0 * p[3] - inter;
  EXPECT_NEAR(losses::weighted_iou(z, g, w).item(), 1.0 - (inter + 1.0) / (uni + 1.0), 1e-14);
}

TEST(Losses, IouAnchors) {
  Tensor gt({1, 1, 32, 32}, 1.0);
  const Tensor w = losses::structure_weights(gt);
  EXPECT_LT(losses::weighted_iou(Tensor({1, 1, 32, 32}, 30.0), gt, w).item(), 1e-10);
  EXPECT_GT(losses::weighted_iou(Tensor({1, 1, 32, 32}, -40.0), gt, w).item(), 0.99);
}

TEST(Losses, CueMseAnchorsAndBruteForce) {
  const Tensor a = random_tensor({2, 1, 5, 7}, 1);
  EXPECT_EQ(losses::cue_mse(a, a).item(), 0.0);
  EXPECT_NEAR(losses::cue_mse(ops::add(a, Tensor(a.shape(), 0.3)), a).item(), 0.09, 1e-15);
  const Tensor b = random_tensor({2, 1, 5, 7}, 2);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) sum += std::pow(a.data()[i] - b.data()[i], 2);
  EXPECT_NEAR(losses::cue_mse(a, b).item(), sum / a.numel(), 1e-15);
  EXPECT_THROW((void)losses::cue_mse(a, Tensor({2, 1, 5, 6})), ValidationError);
}

namespace {

PredictionSet random_predictions(int batch, std::uint64_t seed) {
  PredictionSet p;
  p.r1 = random_tensor({batch, 1, 8, 8}, seed, -3, 3);
  p.r2 = random_tensor({batch, 1, 4, 4}, seed + 1, -3, 3);
  p.r3 = random_tensor({batch, 1, 2, 2}, seed + 2, -3, 3);
  p.r4 = random_tensor({batch, 1, 8, 8}, seed + 3, -3, 3);
  p.r_s = random_tensor({batch, 1, 8, 8}, seed + 4, -1, 1);
  return p;
}

Tensor random_mask(int batch, std::uint64_t seed) {
  Tensor m({batch, 1, 32, 32});
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.4);
  for (double& v : m.data()) v = coin(rng) ? 1.0 : 0.0;
  return m;
}

}  // namespace

TEST(TotalLoss, BreakdownSumsAndIgnoresR4) {
  const PredictionSet p = random_predictions(2, 1);
  const Tensor gt = random_mask(2, 2);
  const Tensor cue = random_tensor({2, 1, 32, 32}, 3, 0, 1);
  const auto r = losses::total_loss(p, gt, cue);
  const auto& b = r.breakdown;
  double sum = b.cue_mse;
  for (int i = 0; i < 3; ++i) {
    EXPECT_GE(b.bce_per_level[i], 0.0);
    EXPECT_GE(b.iou_per_level[i], 0.0);
    sum += b.bce_per_level[i] + b.iou_per_level[i];
  }
  EXPECT_GE(b.cue_mse, 0.0);
  EXPECT_NEAR(b.total, sum, 1e-12);
  EXPECT_EQ(r.total.item(), b.total);

  PredictionSet q = p;
  q.r4 = random_tensor({2, 1, 8, 8}, 99);
  EXPECT_EQ(losses::total_loss(q, gt, cue).breakdown.total, b.total);
  EXPECT_EQ(losses::total_loss(p, gt, cue, false).breakdown.cue_mse, 0.0);
  PredictionSet missing = p;
  missing.r2 = Tensor();
  EXPECT_THROW(losses::total_loss(missing, gt, cue), ValidationError);
}

TEST(TotalLoss, SaturatedPerfectPredictionIsNearZero) {
  Tensor gt({1, 1, 16, 16});
  for (int y = 4; y < 12; ++y) {
    for (int x = 4; x < 12; ++x) gt.data()[y * 16 + x] = 1.0;
  }
  PredictionSet p;
  p.r1 = ops::add(ops::scale(gt, 80.0), Tensor(gt.shape(), -40.0));
  p.r2 = p.r1;
  p.r3 = p.r1;
  p.r_s = Tensor(gt.shape(), 0.25);
  const auto r = losses::total_loss(p, gt, Tensor(gt.shape(), 0.25));
  EXPECT_LT(r.breakdown.total, 1e-3);
}

TEST(TotalLoss, InvariantToBatchOrder) {
  const PredictionSet p = random_predictions(3, 5);
  const Tensor gt = random_mask(3, 6);
  const Tensor cue = random_tensor({3, 1, 32, 32}, 7, 0, 1);
  auto reorder = [](const Tensor& t) {
    const Shape s = t.shape();
    const std::size_t per = s.numel() / s.n;
    std::vector<double> v(t.numel());
    const int order[3] = {2, 0, 1};
    for (int n = 0; n < 3; ++n) std::copy_n(t.data().begin() + order[n] * per, per, v.begin() + n * per);
    return Tensor(s, std::move(v));
  };
  PredictionSet q{reorder(p.r_s), reorder(p.r4), reorder(p.r3), reorder(p.r2), reorder(p.r1)};
  const double a = losses::total_loss(p, gt, cue).breakdown.total;
  const double b = losses::total_loss(q, reorder(gt), reorder(cue)).breakdown.total;
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  const PredictionSet p = random_predictions(2, 8);
  const Tensor gt = random_mask(2, 9);
  const Tensor cue = random_tensor({2, 1, 32, 32}, 10, 0, 1);
  auto loss = [&] { return losses::total_loss(p, gt, cue).total; };
  const auto res = grad_check(loss, {{"r1", p.r1}, {"r2", p.r2}, {"r3", p.r3}, {"r_s", p.r_s}});
  EXPECT_TRUE(res.ok()) << res.worst;
}
