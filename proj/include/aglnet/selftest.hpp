#pragma once

// Acceptance suite: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "aglnet/gradcheck.hpp"
#include "aglnet/train.hpp"

#ifndef AGLNET_TEST_DATA_DIR
#define AGLNET_TEST_DATA_DIR "tests/data"
#endif

namespace aglnet::selftest {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;  // 0 = no runtime bound
  std::function<Outcome()> run;
};

struct Result {
  int id;
  std::string name;
  bool pass;
  double seconds;
  std::string detail;
};

namespace detail {

/// Collects failed expectations; the first few are kept for the report.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    ++count_;
    if (ok) return;
    ++failed_;
    if (messages_.size() < 4) messages_.push_back(what);
  }

  void expect_shape(const Tensor& t, const Shape& want, const std::string& what) {
    const bool ok = t.defined() && t.shape() == want;
    expect(ok, what + " " + (t.defined() ? to_string(t.shape()) : std::string("undefined")) + " != " + to_string(want));
  }

  [[nodiscard]] bool ok() const { return failed_ == 0 && count_ > 0; }
  [[nodiscard]] std::size_t count() const { return count_; }

  [[nodiscard]] std::string summary(const std::string& what) const {
    std::ostringstream os;
    os << count_ - failed_ << "/" << count_ << " " << what;
    for (const auto& m : messages_) os << "; " << m;
    return os.str();
  }

 private:
  std::size_t count_ = 0;
  std::size_t failed_ = 0;
  std::vector<std::string> messages_;
};

inline Tensor random_tensor(const Shape& s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(s.numel());
  for (double& x : v) x = u(rng);
  return Tensor(s, std::move(v));
}

/// Fixed random linear functional of several tensors, used as a scalar probe.
class Probe {
 public:
  explicit Probe(std::uint64_t seed) : rng_(seed) {}

  Tensor operator()(const std::vector<Tensor>& outputs) {
    std::vector<Tensor> terms;
    for (std::size_t k = 0; k < outputs.size(); ++k) {
      if (coeffs_.size() <= k) {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        std::vector<double> c(outputs[k].numel());
        for (double& x : c) x = u(rng_);
        coeffs_.push_back(std::move(c));
      }
      terms.push_back(ops::dot_constant(outputs[k], coeffs_[k]));
    }
    return ops::add_n(terms);
  }

 private:
  std::mt19937_64 rng_;
  std::vector<std::vector<double>> coeffs_;
};

inline std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

inline std::filesystem::path data_dir() {
  if (const char* env = std::getenv("AGL_TEST_DATA_DIR"); env && *env) return env;
  return AGLNET_TEST_DATA_DIR;
}

inline BinaryMask disc(int h, int w, int cy, int cx, int r) {
  BinaryMask m(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) m.set(y, x, (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r);
  }
  return m;
}

inline double binary_iou(const Plane& prob, const BinaryMask& gt) {
  double inter = 0.0;
  double uni = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const bool p = prob[i] > 0.5;
    const bool g = gt[i] != 0;
    inter += p && g;
    uni += p || g;
  }
  return uni > 0.0 ? inter / uni : 1.0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// 1. Shapes and channel ledgers

/// Stage by stage: conv to n_j C/2^q, then + 2^(n_j + 1) auxiliary channels.
inline std::vector<StageLedger> scripted_ledger(int channels, int q, const std::vector<int>& splits) {
  std::vector<StageLedger> rows;
  int in = splits.front() * channels;
  for (int n : splits) {
    StageLedger r;
    r.groups = n;
    r.conv_in = in;
    r.conv_out = n * (channels / (1 << q));
    r.aux = 1 << (n + 1);
    r.concat_out = r.conv_out + r.aux;
    rows.push_back(r);
    in = r.concat_out;
  }
  return rows;
}

inline void check_ledger(detail::Checks& checks, const FRTrace& trace, int channels, int q,
                         const std::vector<int>& splits, const std::string& tag) {
  const auto want = scripted_ledger(channels, q, splits);
  checks.expect(trace.entry_width == splits.front() * channels, tag + " entry width");
  checks.expect(trace.stages.size() == want.size(), tag + " stage count");
  for (std::size_t j = 0; j < std::min(want.size(), trace.stages.size()); ++j) {
    const auto& a = trace.stages[j];
    const auto& b = want[j];
    const std::string st = tag + " stage " + std::to_string(j + 1);
    checks.expect(a.conv_in == b.conv_in, st + " conv in " + std::to_string(a.conv_in) + " vs " + std::to_string(b.conv_in));
    checks.expect(a.conv_out == b.conv_out, st + " conv out");
    checks.expect(a.concat_out == b.concat_out, st + " concat out");
    checks.expect(a.groups == b.groups, st + " groups");
  }
}

inline Outcome shape_ledger() {
  detail::Checks c;
  for (int channels : {4, 8, 64}) {
    for (int size : {64, 96, 128}) {
      ModelConfig mc;
      mc.channels = channels;
      mc.seed = 1;
      const AGLNet model(mc);
      std::mt19937_64 rng(static_cast<std::uint64_t>(channels * 1000 + size));
      const Tensor image = detail::random_tensor({1, 3, size, size}, rng, 0.0, 1.0);
      std::array<FRTrace, 3> traces;
      NoGradGuard no_grad;
      const ModelOutputs out = model.forward(image, &traces);
      const std::string tag = "C=" + std::to_string(channels) + " " + std::to_string(size) + "px";
      const int s8 = size / 8, s16 = size / 16, s32 = size / 32;
      const auto raw = backbone_info(mc.backbone).raw_channels;
      const std::array<int, 3> sides{s8, s16, s32};
      for (int i = 0; i < 3; ++i) {
        const std::string lvl = tag + " level " + std::to_string(i + 1);
        c.expect_shape(out.backbone.levels[i], {1, raw[i], sides[i], sides[i]}, lvl + " backbone");
        c.expect_shape(out.projected.levels[i], {1, channels, sides[i], sides[i]}, lvl + " projected");
        c.expect_shape(out.hfc.enhanced[i], {1, channels, sides[i], sides[i]}, lvl + " X^c");
      }
      c.expect_shape(out.cue_feature, {1, channels, s8, s8}, tag + " A");
      c.expect_shape(out.predictions.r_s, {1, 1, s8, s8}, tag + " r^s");
      c.expect_shape(out.hfc.cascade.g1, {1, channels, s8, s8}, tag + " g1");
      c.expect_shape(out.hfc.cascade.g2, {1, channels, s16, s16}, tag + " g2");
      c.expect_shape(out.hfc.cascade.g3, {1, channels, s32, s32}, tag + " g3");
      const auto& cf = out.hfc.combined;
      c.expect_shape(cf.s3, {1, channels, s32, s32}, tag + " S3");
      c.expect_shape(cf.s2, {1, 2 * channels, s16, s16}, tag + " S2");
      c.expect_shape(cf.s1, {1, 3 * channels, s8, s8}, tag + " S1");
      c.expect_shape(cf.s, {1, 3 * channels, s8, s8}, tag + " S");
      for (int i = 0; i < 3; ++i) {
        c.expect_shape(out.hfc.decoupled.d[i], {1, channels, s8, s8}, tag + " d" + std::to_string(i + 1));
      }
      c.expect_shape(out.hfc.decoupled.weights, {1, 3 * channels, 1, 1}, tag + " w");
      c.expect_shape(out.predictions.r4, {1, 1, s8, s8}, tag + " r4");
      c.expect_shape(out.predictions.r3, {1, 1, s32, s32}, tag + " r3");
      c.expect_shape(out.predictions.r2, {1, 1, s16, s16}, tag + " r2");
      c.expect_shape(out.predictions.r1, {1, 1, s8, s8}, tag + " r1");
      // traces are in application order FR3, FR2, FR1
      for (int k = 0; k < 3; ++k) {
        check_ledger(c, traces[k], channels, mc.rd_config.q_exponents[k], mc.rd_config.split_counts,
                     tag + " FR" + std::to_string(3 - k));
      }
    }
  }
  return {c.ok(), c.summary("exact shape/width checks over C in {4,8,64} x {64,96,128} px")};
}

// ---------------------------------------------------------------------------
// 2. Gradients against central finite differences

struct GradCase {
  std::string name;
  // Builds the case for one seed: returns the loss closure and the tensors to check.
  std::function<std::pair<std::function<Tensor()>, NamedTensors>(std::uint64_t)> build;
};

inline NamedTensors with_params(NamedTensors inputs, nn::Module& m, const std::string& prefix) {
  for (auto& [name, t] : m.named_parameters()) inputs.emplace_back(prefix + "." + name, t);
  return inputs;
}

inline std::vector<GradCase> gradient_cases() {
  using Built = std::pair<std::function<Tensor()>, NamedTensors>;
  std::vector<GradCase> cases;
  cases.push_back({"mfc_block", [](std::uint64_t seed) -> Built {
                     std::mt19937_64 rng(seed);
                     auto block = std::make_shared<MfcBlock>(4, rng);
                     Tensor x = detail::random_tensor({1, 4, 4, 4}, rng);
                     auto probe = std::make_shared<detail::Probe>(seed + 1);
                     auto loss = [=] { return (*probe)({block->forward(x)}); };
                     return {loss, with_params({{"x", x}}, *block, "mfc")};
                   }});
  cases.push_back({"cascade_combine", [](std::uint64_t seed) -> Built {
                     std::mt19937_64 rng(seed);
                     Tensor x1 = detail::random_tensor({1, 3, 4, 4}, rng);
                     Tensor x2 = detail::random_tensor({1, 3, 2, 2}, rng);
                     Tensor x3 = detail::random_tensor({1, 3, 1, 1}, rng);
                     auto probe = std::make_shared<detail::Probe>(seed + 1);
                     auto loss = [=] {
                       const CascadeOutputs g = cascade_combine({x1, x2, x3});
                       return (*probe)({g.g1, g.g2, g.g3});
                     };
                     return {loss, {{"x1", x1}, {"x2", x2}, {"x3", x3}}};
                   }});
  cases.push_back({"integrate_cue", [](std::uint64_t seed) -> Built {
                     std::mt19937_64 rng(seed);
                     auto block = std::make_shared<CueIntegration>(4, rng);
                     CascadeOutputs g{detail::random_tensor({1, 4, 8, 8}, rng), detail::random_tensor({1, 4, 4, 4}, rng),
                                      detail::random_tensor({1, 4, 2, 2}, rng)};
                     Tensor a = detail::random_tensor({1, 4, 8, 8}, rng);
                     auto probe = std::make_shared<detail::Probe>(seed + 1);
                     auto loss = [=] {
                       const CombinedFeature s = block->forward(g, a);
                       return (*probe)({s.s3, s.s2, s.s1, s.s});
                     };
                     return {loss, with_params({{"g1", g.g1}, {"g2", g.g2}, {"g3", g.g3}, {"A", a}}, *block, "integ")};
                   }});
  cases.push_back({"decouple", [](std::uint64_t seed) -> Built {
                     std::mt19937_64 rng(seed);
                     auto block = std::make_shared<Decoupling>(4, rng);
                     Tensor s = detail::random_tensor({1, 12, 4, 4}, rng);
                     Tensor a = detail::random_tensor({1, 4, 4, 4}, rng);
                     auto probe = std::make_shared<detail::Probe>(seed + 1);
                     auto loss = [=] {
                       const DecoupledFeatures d = block->forward(s, a);
                       return (*probe)({d.d[0], d.d[1], d.d[2], d.weights, d.r4});
                     };
                     return {loss, with_params({{"S", s}, {"A", a}}, *block, "dec")};
                   }});
  cases.push_back({"fr_forward", [](std::uint64_t seed) -> Built {
                     std::mt19937_64 rng(seed);
                     auto fr = std::make_shared<FeatureRefiner>(FRConfig{1, 1, {4, 3, 2}, 3}, 4, rng);
                     Tensor x = detail::random_tensor({1, 4, 4, 4}, rng);
                     Tensor r_prev = detail::random_tensor({1, 1, 2, 2}, rng);
                     Tensor r_s = detail::random_tensor({1, 1, 4, 4}, rng);
                     auto probe = std::make_shared<detail::Probe>(seed + 1);
                     auto loss = [=] { return (*probe)({fr->forward(x, r_prev, r_s)}); };
                     return {loss, with_params({{"x", x}, {"r_prev", r_prev}, {"r_s", r_s}}, *fr, "fr")};
                   }});
  cases.push_back({"total_loss", [](std::uint64_t seed) -> Built {
                     std::mt19937_64 rng(seed);
                     PredictionSet p;
                     p.r1 = detail::random_tensor({1, 1, 4, 4}, rng, -2.0, 2.0);
                     p.r2 = detail::random_tensor({1, 1, 2, 2}, rng, -2.0, 2.0);
                     p.r3 = detail::random_tensor({1, 1, 1, 1}, rng, -2.0, 2.0);
                     p.r4 = detail::random_tensor({1, 1, 4, 4}, rng, -2.0, 2.0);
                     p.r_s = detail::random_tensor({1, 1, 4, 4}, rng, -2.0, 2.0);
                     std::bernoulli_distribution coin(0.4);
                     Tensor gt({1, 1, 8, 8});
                     for (double& v : gt.data()) v = coin(rng) ? 1.0 : 0.0;
                     Tensor cue = detail::random_tensor({1, 1, 8, 8}, rng, 0.0, 1.0);
                     auto loss = [=] { return losses::total_loss(p, gt, cue, true).total; };
                     return {loss, {{"r1", p.r1}, {"r2", p.r2}, {"r3", p.r3}, {"r_s", p.r_s}}};
                   }});
  return cases;
}

inline Outcome gradients() {
  bool pass = true;
  std::ostringstream os;
  std::size_t total = 0;
  for (const auto& gc : gradient_cases()) {
    GradCheckResult res;
    std::uint64_t seed = 100;
    for (int attempt = 0; attempt < 8; ++attempt, ++seed) {
      auto [loss, wrt] = gc.build(seed);
      res = grad_check(loss, wrt, GradCheckOptions{1e-6, 1e-4, 1e-6, 0, seed});
      // redraw near ReLU kinks
      if (res.kink_margin >= 1e-4) break;
    }
    total += res.checked;
    pass = pass && res.ok() && res.kink_margin >= 1e-4;
    os << gc.name << " " << (res.ok() ? "ok" : "FAILED") << " (" << res.checked << ", worst "
       << detail::fixed(res.worst_excess, 3) << ")";
    if (!res.ok()) os << " [" << res.worst << "]";
    os << "; ";
  }
  os << total << " partials within 1e-4 rel / 1e-6 abs";
  return {pass, os.str()};
}

// ---------------------------------------------------------------------------
// 3. Literal transcriptions

/// UP_{xt}: bilinear, half-pixel centres, edge-clamped, one plane at a time.
inline std::vector<double> literal_upsample(const std::vector<double>& src, int h, int w, int t) {
  const int oh = h * t;
  const int ow = w * t;
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    const double sy = std::max(0.0, (y + 0.5) / t - 0.5);
    const int y0 = std::min(static_cast<int>(std::floor(sy)), h - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int x = 0; x < ow; ++x) {
      const double sx = std::max(0.0, (x + 0.5) / t - 0.5);
      const int x0 = std::min(static_cast<int>(std::floor(sx)), w - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      out[static_cast<std::size_t>(y) * ow + x] =
          (1 - fy) * ((1 - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1]) +
          fy * ((1 - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1]);
    }
  }
  return out;
}

inline std::vector<double> plane_values(const Tensor& t, int n, int c) {
  const Shape& s = t.shape();
  const auto v = t.data();
  const auto off = (static_cast<std::size_t>(n) * s.c + c) * s.plane();
  return {v.begin() + static_cast<std::ptrdiff_t>(off), v.begin() + static_cast<std::ptrdiff_t>(off + s.plane())};
}

inline Outcome transcription_oracles() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> small(1, 3);
  double cascade_err = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const int n = small(rng) % 2 + 1;
    const int c = small(rng) + 1;
    const int h3 = small(rng);
    const int w3 = small(rng);
    const Tensor x1 = detail::random_tensor({n, c, 4 * h3, 4 * w3}, rng);
    const Tensor x2 = detail::random_tensor({n, c, 2 * h3, 2 * w3}, rng);
    const Tensor x3 = detail::random_tensor({n, c, h3, w3}, rng);
    const CascadeOutputs g = cascade_combine({x1, x2, x3});
    for (int b = 0; b < n; ++b) {
      for (int ch = 0; ch < c; ++ch) {
        // g3 = X3
        const auto g3 = plane_values(x3, b, ch);
        // g2 = X2 (x) UP2(g3)
        const auto x2p = plane_values(x2, b, ch);
        const auto up_g3 = literal_upsample(g3, h3, w3, 2);
        std::vector<double> g2(x2p.size());
        for (std::size_t i = 0; i < g2.size(); ++i) g2[i] = x2p[i] * up_g3[i];
        // g1 = X1 (x) UP2(g2) (x) UP2(X2) (x) UP4(g3)
        const auto x1p = plane_values(x1, b, ch);
        const auto up_g2 = literal_upsample(g2, 2 * h3, 2 * w3, 2);
        const auto up_x2 = literal_upsample(x2p, 2 * h3, 2 * w3, 2);
        const auto up4_g3 = literal_upsample(g3, h3, w3, 4);
        std::vector<double> g1(x1p.size());
        for (std::size_t i = 0; i < g1.size(); ++i) g1[i] = x1p[i] * up_g2[i] * up_x2[i] * up4_g3[i];

        const auto got1 = plane_values(g.g1, b, ch);
        const auto got2 = plane_values(g.g2, b, ch);
        const auto got3 = plane_values(g.g3, b, ch);
        for (std::size_t i = 0; i < g1.size(); ++i) cascade_err = std::max(cascade_err, std::abs(got1[i] - g1[i]));
        for (std::size_t i = 0; i < g2.size(); ++i) cascade_err = std::max(cascade_err, std::abs(got2[i] - g2[i]));
        for (std::size_t i = 0; i < g3.size(); ++i) cascade_err = std::max(cascade_err, std::abs(got3[i] - g3[i]));
      }
    }
  }

  double ledger_err = 0.0;
  std::uniform_int_distribution<int> qd(0, 2);
  std::uniform_int_distribution<int> mult(1, 4);
  std::uniform_int_distribution<int> stages(1, 4);
  std::uniform_int_distribution<int> first(1, 6);
  for (int inst = 0; inst < 20; ++inst) {
    const int q = qd(rng);
    const int channels = (1 << q) * mult(rng);
    std::vector<int> splits;
    int top = first(rng) + 3;
    const int count = stages(rng);
    for (int j = 0; j < count && top >= 1; ++j) {
      std::uniform_int_distribution<int> pick(std::max(1, top - 2), top);
      splits.push_back(pick(rng));
      top = splits.back() - 1;
    }
    const int iterations = stages(rng);
    const FeatureRefiner fr(FRConfig{1, q, splits, iterations}, channels, rng);
    const Tensor x = detail::random_tensor({1, channels, 2, 2}, rng);
    const Tensor r = detail::random_tensor({1, 1, 2, 2}, rng);
    FRTrace trace;
    NoGradGuard no_grad;
    const Tensor out = fr.forward(x, r, r, &trace);
    const auto want = scripted_ledger(channels, q, splits);
    ledger_err = std::max(ledger_err, std::abs(static_cast<double>(trace.entry_width - splits.front() * channels)));
    ledger_err = std::max(ledger_err, std::abs(static_cast<double>(trace.stages.size()) - static_cast<double>(want.size())));
    for (std::size_t j = 0; j < std::min(want.size(), trace.stages.size()); ++j) {
      const auto& a = trace.stages[j];
      const auto& b = want[j];
      for (double d : {a.conv_in - b.conv_in, a.conv_out - b.conv_out, a.concat_out - b.concat_out, a.groups - b.groups}) {
        ledger_err = std::max(ledger_err, std::abs(d));
      }
    }
    if (out.shape() != Shape{1, 1, 2, 2}) ledger_err = std::max(ledger_err, 1.0);
  }
  const bool pass = cascade_err <= 1e-6 && ledger_err <= 1e-6;
  return {pass, "cascade max-abs " + detail::sci(cascade_err) + ", FR ledger max-abs " + detail::sci(ledger_err) +
                    " over 20 random instances each (tol 1e-6)"};
}

// ---------------------------------------------------------------------------
// 4. Cue generation

inline Outcome cue_generation() {
  detail::Checks c;
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  Plane p(32, 40);
  for (double& v : p.values()) v = u(rng);
  const Plane coeffs = block_dct(p);
  double worst_parseval = 0.0;
  for (int by = 0; by < 32; by += kDctBlock) {
    for (int bx = 0; bx < 40; bx += kDctBlock) {
      double e_pix = 0.0;
      double e_coef = 0.0;
      for (int y = 0; y < kDctBlock; ++y) {
        for (int x = 0; x < kDctBlock; ++x) {
          e_pix += p(by + y, bx + x) * p(by + y, bx + x);
          e_coef += coeffs(by + y, bx + x) * coeffs(by + y, bx + x);
        }
      }
      worst_parseval = std::max(worst_parseval, std::abs(e_pix - e_coef) / e_pix);
    }
  }
  c.expect(worst_parseval <= 1e-5, "Parseval rel " + detail::sci(worst_parseval));
  const Plane back = block_idct(coeffs);
  double worst_round = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) worst_round = std::max(worst_round, std::abs(back[i] - p[i]));
  c.expect(worst_round <= 1e-5, "round trip " + detail::sci(worst_round));

  for (double level : {0.0, 0.37, 1.0}) {
    const auto edges = canny_edges(Plane(24, 24, level));
    c.expect(std::count(edges.values().begin(), edges.values().end(), 1) == 0,
             "Canny of constant " + detail::fixed(level, 2) + " not empty");
  }

  BinaryMask square(20, 20);
  for (int y = 5; y < 15; ++y) {
    for (int x = 5; x < 15; ++x) square.set(y, x, true);
  }
  const CueMap b = boundary_from_mask(square, 1);
  const double ring = std::accumulate(b.data.values().begin(), b.data.values().end(), 0.0);
  c.expect(ring == 36.0, "boundary of 10x10 square has " + detail::fixed(ring, 0) + " pixels");

  // Texture = clamp(boundary + Canny * mask) recomputed term by term.
  const int n = 48;
  BinaryMask m(n, n);
  RgbImage img(n, n, 0.5);
  for (int y = 12; y < 36; ++y) {
    for (int x = 12; x < 36; ++x) {
      m.set(y, x, true);
      for (auto& ch : img.channels) ch(y, x) = ((x / 4 + y / 4) % 2) ? 0.85 : 0.15;
    }
  }
  for (auto& ch : img.channels) {
    for (double& v : ch.values()) v = std::clamp(v + 0.02 * (u(rng) - 0.5), 0.0, 1.0);
  }
  const CueMap t = texture_label(m, img);
  const CueMap edge = boundary_from_mask(m, 1);
  const auto canny = canny_edges(to_gray(img));
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double expected = std::min(1.0, edge.data[i] + static_cast<double>(canny[i]) * m[i]);
    mismatches += t.data[i] != expected;
  }
  c.expect(mismatches == 0, "texture differs from term-wise sum at " + std::to_string(mismatches) + " pixels");

  std::ostringstream os;
  os << "Parseval rel " << detail::sci(worst_parseval) << ", round trip " << detail::sci(worst_round)
     << ", constant Canny empty, square ring " << ring << " px, texture term-wise exact";
  return {c.ok(), c.ok() ? os.str() : c.summary("cue checks")};
}

// ---------------------------------------------------------------------------
// 5. Metrics

inline Outcome metric_oracles() {
  detail::Checks c;
  const auto path = detail::data_dir() / "metric_cases.json";
  std::ifstream in(path);
  if (!in) return {false, "reference cases not found at " + path.string() + " (set AGL_TEST_DATA_DIR)"};
  const auto doc = nlohmann::json::parse(in);
  double worst = 0.0;
  std::size_t cases = 0;
  for (const auto& jc : doc.at("cases")) {
    const int h = jc.at("height");
    const int w = jc.at("width");
    Plane pred(h, w);
    BinaryMask gt(h, w);
    for (int i = 0; i < h * w; ++i) {
      pred[i] = jc.at("pred")[i];
      gt.set(i / w, i % w, jc.at("gt")[i].get<int>() != 0);
    }
    const auto s = metrics::evaluate(pred, gt);
    const auto& e = jc.at("expected");
    for (const auto& [key, got] : {std::pair<std::string, double>{"s_alpha", s.s_alpha},
                                   {"f_beta_w", s.f_beta_w},
                                   {"f_mean", s.f_mean},
                                   {"e_mean", s.e_mean},
                                   {"mae", s.mae}}) {
      const double err = std::abs(got - e.at(key).get<double>());
      worst = std::max(worst, err);
      c.expect(err <= 1e-6, "case " + std::to_string(cases) + " " + key + " off by " + detail::sci(err));
    }
    ++cases;
  }
  c.expect(cases == 10, "expected 10 reference cases");

  const BinaryMask gt = detail::disc(24, 28, 11, 13, 6);
  const auto perfect = metrics::evaluate(gt.to_plane(), gt);
  c.expect(std::abs(perfect.s_alpha - 1.0) <= 1e-12, "perfect S_alpha " + detail::fixed(perfect.s_alpha, 12));
  c.expect(std::abs(perfect.f_beta_w - 1.0) <= 1e-12, "perfect F_beta^w " + detail::fixed(perfect.f_beta_w, 12));
  c.expect(std::abs(perfect.f_max - 1.0) <= 1e-12, "perfect max F " + detail::fixed(perfect.f_max, 12));
  c.expect(std::abs(perfect.e_max - 1.0) <= 1e-12, "perfect max E " + detail::fixed(perfect.e_max, 12));
  c.expect(perfect.mae == 0.0, "perfect MAE " + detail::sci(perfect.mae));
  const auto inverted = metrics::evaluate(gt.inverted().to_plane(), gt);
  c.expect(inverted.mae == 1.0, "inverted MAE " + detail::fixed(inverted.mae, 12));

  const std::array<double, 5> levels{0.05, 0.15, 0.3, 0.5, 0.8};
  std::array<metrics::ImageScores, 5> avg{};
  const BinaryMask blob = detail::disc(32, 32, 15, 17, 8);
  for (int seed = 0; seed < 8; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> z(blob.size());
    for (double& v : z) v = noise(rng);
    for (std::size_t l = 0; l < levels.size(); ++l) {
      Plane p(32, 32);
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::clamp(blob[i] + levels[l] * z[i], 0.0, 1.0);
      const auto s = metrics::evaluate(p, blob);
      avg[l].s_alpha += s.s_alpha;
      avg[l].f_beta_w += s.f_beta_w;
      avg[l].f_mean += s.f_mean;
      avg[l].e_mean += s.e_mean;
      avg[l].mae += s.mae;
    }
  }
  for (std::size_t l = 1; l < levels.size(); ++l) {
    const std::string at = " not monotone at noise " + detail::fixed(levels[l], 2);
    c.expect(avg[l].s_alpha < avg[l - 1].s_alpha, "S_alpha" + at);
    c.expect(avg[l].f_beta_w < avg[l - 1].f_beta_w, "F_beta^w" + at);
    c.expect(avg[l].f_mean < avg[l - 1].f_mean, "mean F" + at);
    c.expect(avg[l].e_mean < avg[l - 1].e_mean, "mean E" + at);
    c.expect(avg[l].mae > avg[l - 1].mae, "MAE" + at);
  }
  std::ostringstream os;
  os << cases << " reference cases, worst " << detail::sci(worst) << " (tol 1e-6); anchors exact (perfect mean F "
     << detail::fixed(perfect.f_mean, 4) << ", mean E " << detail::fixed(perfect.e_mean, 4)
     << " over the 0..255 threshold grid); monotone over 5 noise levels";
  return {c.ok(), c.ok() ? os.str() : c.summary("metric checks")};
}

// ---------------------------------------------------------------------------
// 6. Overfit a single sample

inline Outcome overfit() {
  TrainConfig cfg = desk_preset();
  cfg.out_dir.clear();
  cfg.synthetic_count = 1;
  cfg.val_fraction = 0.0;
  cfg.batch_size = 1;
  cfg.steps = 200;
  cfg.cosine_period_steps = 200;
  cfg.augment_flip = cfg.augment_crop = cfg.augment_jitter = false;
  auto source = [&](std::size_t i) {
    return synthetic_sample({1, cfg.input_size, cfg.model.seed}, static_cast<int>(i));
  };
  Trainer trainer(cfg, source, 1);
  std::vector<double> loss;
  for (int s = 0; s < cfg.steps; ++s) loss.push_back(trainer.step().loss.total);

  int violations = 0;
  double worst_rise = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s + 50 < loss.size(); ++s) {
    const double d = loss[s + 50] - loss[s];
    worst_rise = std::max(worst_rise, d);
    if (!(d < 0.0)) ++violations;
  }
  const PreparedSample& sample = trainer.loader().fetch(0);
  const Batch b = collate({sample}, {0});
  const Plane prob = predict_probabilities(trainer.model(), b.images, cfg.input_size, cfg.input_size)[0];
  const double iou = detail::binary_iou(prob, sample.mask);
  std::ostringstream os;
  os << "loss " << detail::fixed(loss.front()) << " -> " << detail::fixed(loss.back()) << ", " << violations
     << " of " << loss.size() - 50 << " 50-step windows not decreasing (max change " << detail::fixed(worst_rise)
     << "), IoU " << detail::fixed(iou) << " (need > 0.9)";
  return {violations == 0 && iou > 0.9, os.str()};
}

// ---------------------------------------------------------------------------
// 7. Adaptability to each cue kind

inline Outcome cue_adaptability() {
  std::vector<double> scores;
  std::ostringstream os;
  for (CueKind kind : kAllCueKinds) {
    TrainConfig cfg = desk_preset();
    cfg.out_dir.clear();
    cfg.cue_kind = kind;
    cfg.synthetic_count = 32;
    cfg.val_fraction = 0.0;
    cfg.steps = 300;
    auto source = [&](std::size_t i) {
      return synthetic_sample({cfg.synthetic_count, cfg.input_size, cfg.model.seed}, static_cast<int>(i));
    };
    Trainer trainer(cfg, source, 32);
    for (int s = 0; s < cfg.steps; ++s) trainer.step();
    scores.push_back(trainer.validate());
    os << cue_kind_name(kind) << " " << detail::fixed(scores.back()) << ", ";
  }
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  const double spread = *hi - *lo;
  const bool pass = *lo >= 0.85 && spread <= 0.10;
  os << "spread " << detail::fixed(spread) << " (need all >= 0.85, spread <= 0.10)";
  return {pass, "training S_alpha " + os.str()};
}

// ---------------------------------------------------------------------------
// 8. Ablation wiring

inline Outcome ablation_wiring() {
  struct Row {
    std::string name;
    bool combination, decoupling, rd, aig;
  };
  const std::vector<Row> rows{{"baseline", false, false, false, false},
                              {"+combination", true, false, false, false},
                              {"+decoupling", true, true, false, false},
                              {"+rd", true, true, true, false},
                              {"full", true, true, true, true}};
  detail::Checks c;
  std::ostringstream os;
  for (const auto& row : rows) {
    TrainConfig cfg = desk_preset();
    cfg.out_dir.clear();
    cfg.input_size = 64;
    cfg.synthetic_count = 4;
    cfg.val_fraction = 0.0;
    cfg.batch_size = 2;
    cfg.model.combination = row.combination;
    cfg.model.decoupling = row.decoupling;
    cfg.model.rd = row.rd;
    cfg.model.aig = row.aig;
    try {
      auto source = [&](std::size_t i) { return synthetic_sample({4, 64, 3}, static_cast<int>(i)); };
      Trainer trainer(cfg, source, 4);
      const StepRecord r = trainer.step();
      c.expect(std::isfinite(r.loss.total), row.name + " loss not finite");
      os << row.name << " " << detail::fixed(r.loss.total, 3) << ", ";
    } catch (const std::exception& e) {
      c.expect(false, row.name + ": " + e.what());
    }
  }
  std::size_t variants = 0;
  auto construct = [&](RdConfig rd, const std::string& what) {
    try {
      ModelConfig mc;
      mc.channels = 8;
      mc.rd_config = std::move(rd);
      const AGLNet model(mc);
      std::mt19937_64 rng(5);
      NoGradGuard no_grad;
      const ModelOutputs out = model.forward(detail::random_tensor({1, 3, 64, 64}, rng, 0.0, 1.0));
      c.expect(out.predictions.r1.shape() == Shape{1, 1, 8, 8}, what + " r1 shape");
      ++variants;
    } catch (const std::exception& e) {
      c.expect(false, what + ": " + e.what());
    }
  };
  for (int it = 1; it <= 4; ++it) construct(RdConfig{{4, 3, 2}, {2, 1, 0}, it}, "iterations " + std::to_string(it));
  for (const auto& splits : std::vector<std::vector<int>>{{4}, {3, 2}, {4, 3, 2}, {5, 4, 3}, {4, 2, 1}, {5, 4, 3, 2}}) {
    construct(RdConfig{splits, {2, 1, 0}, 3}, "splits " + aglnet::detail::join_ints(splits));
  }
  for (const auto& q : std::vector<std::array<int, 3>>{{0, 0, 0}, {1, 1, 1}, {2, 2, 2}, {2, 1, 0}, {0, 1, 2}, {3, 2, 1}}) {
    construct(RdConfig{{4, 3, 2}, q, 3}, "q " + aglnet::detail::join_ints({q.begin(), q.end()}));
  }
  os << variants << " refiner variants constructed";
  return {c.ok(), c.ok() ? "one-step losses " + os.str() : c.summary("ablation checks")};
}

// ---------------------------------------------------------------------------
// 9. Determinism

inline Outcome determinism() {
  detail::Checks c;
  TrainConfig cfg = desk_preset();
  cfg.out_dir.clear();
  cfg.input_size = 64;
  cfg.synthetic_count = 8;
  auto source = [&](std::size_t i) {
    return synthetic_sample({cfg.synthetic_count, cfg.input_size, cfg.model.seed}, static_cast<int>(i));
  };
  Trainer a(cfg, source, 8);
  Trainer b(cfg, source, 8);
  const StepRecord ra = a.step();
  const StepRecord rb = b.step();
  c.expect(ra.loss.total == rb.loss.total, "step-0 loss differs");
  const StepRecord ra1 = a.step();
  const StepRecord rb1 = b.step();
  c.expect(ra1.loss.total == rb1.loss.total, "step-1 loss differs");

  const auto dir = std::filesystem::temp_directory_path() / ("aglnet_selftest_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.ckpt";
  save_checkpoint(path, a.model(), cfg, a.steps_done());
  const auto restored = model_from_checkpoint(load_checkpoint(path));
  std::mt19937_64 rng(9);
  const Tensor images = detail::random_tensor({2, 3, 64, 64}, rng, 0.0, 1.0);
  const auto p1 = predict_probabilities(a.model(), images, 80, 72);
  const auto p2 = predict_probabilities(*restored, images, 80, 72);
  bool same = true;
  for (std::size_t k = 0; k < p1.size(); ++k) {
    same = same && std::equal(p1[k].values().begin(), p1[k].values().end(), p2[k].values().begin());
  }
  c.expect(same, "restored model predictions differ");
  std::filesystem::remove_all(dir);
  std::ostringstream os;
  os << "step-0 loss " << std::setprecision(17) << ra.loss.total << " reproduced bit-exactly; checkpoint round trip "
     << (same ? "bit-exact" : "differs");
  return {c.ok(), c.ok() ? os.str() : c.summary("determinism checks")};
}

// ---------------------------------------------------------------------------

inline std::vector<Criterion> criteria() {
  return {{1, "shape/ledger suite", 60, shape_ledger},
          {2, "gradient suite", 300, gradients},
          {3, "transcription oracles", 0, transcription_oracles},
          {4, "cue-generation suite", 60, cue_generation},
          {5, "metric oracle suite", 0, metric_oracles},
          {6, "overfit convergence", 180, overfit},
          {7, "cue adaptability", 1200, cue_adaptability},
          {8, "ablation wiring", 0, ablation_wiring},
          {9, "determinism", 0, determinism}};
}

/// Runs the selected criteria (all when `only` is empty) and prints one line
/// per criterion. Returns the results in order.
inline std::vector<Result> run(std::ostream& out, const std::set<int>& only = {}) {
  std::vector<Result> results;
  for (const auto& cr : criteria()) {
    if (!only.empty() && !only.count(cr.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool pass = o.pass;
    if (cr.budget_seconds > 0 && secs >= cr.budget_seconds) {
      pass = false;
      o.detail += "; over the " + detail::fixed(cr.budget_seconds, 0) + " s budget";
    }
    out << (pass ? "PASS" : "FAIL") << " [" << cr.id << "] " << cr.name << " (" << detail::fixed(secs, 1)
        << " s): " << o.detail << std::endl;
    results.push_back({cr.id, cr.name, pass, secs, o.detail});
  }
  return results;
}

}  // namespace aglnet::selftest
