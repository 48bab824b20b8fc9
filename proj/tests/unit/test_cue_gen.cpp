#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "aglnet/cue_gen.hpp"

using namespace aglnet;

namespace {

BinaryMask square_mask(int size, int top, int left, int side) {
  BinaryMask m(size, size);
  for (int y = top; y < top + side; ++y) {
    for (int x = left; x < left + side; ++x) m.set(y, x, true);
  }
  return m;
}

RgbImage gray_image(const Plane& p) {
  RgbImage img;
  img.channels = {p, p, p};
  return img;
}

// Foreground pixels with a 4- or 8-neighbour of the other label, found by
// scanning every adjacent pair.
std::size_t transition_pixels_brute_force(const BinaryMask& m) {
  std::size_t n = 0;
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (!m(y, x)) continue;
      bool edge = false;
      for (int yy = 0; yy < m.height() && !edge; ++yy) {
        for (int xx = 0; xx < m.width() && !edge; ++xx) {
          if (std::max(std::abs(yy - y), std::abs(xx - x)) == 1 && !m(yy, xx)) edge = true;
        }
      }
      n += edge;
    }
  }
  return n;
}

double brute_dct(const Plane& p, int by, int bx, int u, int v) {
  const int n = kDctBlock;
  double acc = 0.0;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      acc += p(by + y, bx + x) * std::cos(std::numbers::pi * (2 * y + 1) * u / (2.0 * n)) *
             std::cos(std::numbers::pi * (2 * x + 1) * v / (2.0 * n));
    }
  }
  const double au = std::sqrt((u == 0 ? 1.0 : 2.0) / n);
  const double av = std::sqrt((v == 0 ? 1.0 : 2.0) / n);
  return au * av * acc;
}

Plane random_plane(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Plane p(h, w);
  for (double& v : p.values()) v = u(rng);
  return p;
}

}  // namespace

TEST(Boundary, EmptyMaskHasNoBoundary) {
  const CueMap b = boundary_from_mask(BinaryMask(16, 16), 1);
  for (double v : b.data.values()) EXPECT_EQ(v, 0.0);
}

TEST(Boundary, FullMaskIgnoresImageFrame) {
  const CueMap b = boundary_from_mask(BinaryMask(16, 16, 1), 2);
  for (double v : b.data.values()) EXPECT_EQ(v, 0.0);
}

TEST(Boundary, CenteredSquareGivesPerimeterRing) {
  const BinaryMask m = square_mask(32, 11, 11, 10);
  const CueMap b = boundary_from_mask(m, 1);
  double total = 0.0;
  for (double v : b.data.values()) total += v;
  EXPECT_EQ(total, 36.0);
  EXPECT_EQ(static_cast<std::size_t>(total), transition_pixels_brute_force(m));
}

TEST(Boundary, MatchesBruteForceOnRandomMasks) {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 5; ++trial) {
    BinaryMask m(12, 12);
    for (int y = 0; y < 12; ++y) {
      for (int x = 0; x < 12; ++x) m.set(y, x, coin(rng));
    }
    const CueMap b = boundary_from_mask(m, 1);
    double total = 0.0;
    for (double v : b.data.values()) total += v;
    EXPECT_EQ(static_cast<std::size_t>(total), transition_pixels_brute_force(m));
  }
}

TEST(Boundary, BothSidesTogetherFormTheSymmetricBand) {
  const BinaryMask m = square_mask(24, 5, 7, 9);
  for (int t = 1; t <= 3; ++t) {
    const CueMap inner = boundary_from_mask(m, t);
    const CueMap outer = boundary_from_mask(m.inverted(), t);
    const BinaryMask d = dilate(m, t);
    const BinaryMask e = erode(m, t);
    for (std::size_t i = 0; i < m.size(); ++i) {
      EXPECT_EQ(inner.data[i] + outer.data[i], (d[i] != e[i]) ? 1.0 : 0.0);
    }
  }
}

TEST(Boundary, RejectsBadThicknessAndNonBinaryMasks) {
  EXPECT_THROW(boundary_from_mask(BinaryMask(4, 4), 0), ValidationError);
  Plane p(4, 4, 0.5);
  EXPECT_THROW(BinaryMask::from_plane(p), ValidationError);
  Grid<std::uint8_t> g(2, 2, 2);
  EXPECT_THROW(BinaryMask{g}, ValidationError);
}

TEST(Canny, ConstantImageHasNoEdges) {
  const RgbImage img(32, 32, 0.4);
  const CueMap c = canny_label(img, BinaryMask(32, 32, 1));
  for (double v : c.data.values()) EXPECT_EQ(v, 0.0);
}

TEST(Canny, VerticalStepGivesSingleColumn) {
  for (int c : {7, 16, 20}) {
    Plane p(32, 32, 0.2);
    for (int y = 0; y < 32; ++y) {
      for (int x = c; x < 32; ++x) p(y, x) = 0.8;
    }
    const CueMap e = canny_label(gray_image(p), BinaryMask(32, 32, 1));
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) EXPECT_EQ(e.data(y, x), x == c ? 1.0 : 0.0) << "c=" << c << " y=" << y << " x=" << x;
    }
  }
}

TEST(Canny, EmptyMaskAnnihilates) {
  std::mt19937_64 rng(1);
  const RgbImage img = gray_image(random_plane(24, 24, rng));
  const CueMap e = canny_label(img, BinaryMask(24, 24));
  for (double v : e.data.values()) EXPECT_EQ(v, 0.0);
}

TEST(Canny, OutputIsBinaryAndIdempotentUnderMasking) {
  std::mt19937_64 rng(2);
  RgbImage img;
  for (auto& ch : img.channels) ch = random_plane(32, 32, rng);
  const BinaryMask m = square_mask(32, 4, 6, 18);
  const CueMap e = canny_label(img, m);
  for (std::size_t i = 0; i < e.data.size(); ++i) {
    EXPECT_TRUE(e.data[i] == 0.0 || e.data[i] == 1.0);
    EXPECT_EQ(e.data[i] * m[i], e.data[i]);
  }
}

TEST(Canny, RejectsInvalidThresholds) {
  const RgbImage img(8, 8);
  const BinaryMask m(8, 8);
  EXPECT_THROW(canny_label(img, m, {1.4, 0.3, 0.1}), ValidationError);
  EXPECT_THROW(canny_label(img, m, {1.4, 0.0, 0.3}), ValidationError);
  EXPECT_THROW(canny_label(img, BinaryMask(8, 9), {}), ValidationError);
}

TEST(Texture, UniformImageGivesContourOnly) {
  const BinaryMask m = square_mask(32, 8, 8, 12);
  const CueMap t = texture_label(m, RgbImage(32, 32, 0.6));
  const CueMap b = boundary_from_mask(m, 1);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(t.data[i], b.data[i]);
}

TEST(Texture, EmptyMaskGivesZeros) {
  std::mt19937_64 rng(4);
  RgbImage img;
  for (auto& ch : img.channels) ch = random_plane(16, 16, rng);
  const CueMap t = texture_label(BinaryMask(16, 16), img);
  for (double v : t.data.values()) EXPECT_EQ(v, 0.0);
}

TEST(Texture, EqualsTermwiseSumOnTexturedSquare) {
  const int n = 48;
  const BinaryMask m = square_mask(n, 12, 12, 24);
  Plane p(n, n, 0.5);
  for (int y = 12; y < 36; ++y) {
    for (int x = 12; x < 36; ++x) p(y, x) = ((x / 4 + y / 4) % 2) ? 0.9 : 0.1;
  }
  const RgbImage img = gray_image(p);
  const CueMap t = texture_label(m, img);
  const CueMap b = boundary_from_mask(m, 1);
  const auto edges = canny_edges(to_gray(img));
  double interior = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double expected = std::min(1.0, b.data[i] + edges[i] * m[i]);
    EXPECT_EQ(t.data[i], expected);
    interior += edges[i] * m[i] * (1.0 - b.data[i]);
  }
  EXPECT_GT(interior, 0.0);
}

TEST(Dct, BasisBlockHasSingleCoefficient) {
  Plane p(8, 8);
  const auto c = dct_matrix(8);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) p(y, x) = c[1 * 8 + y] * c[0 * 8 + x];
  }
  const Plane coeffs = block_dct(p);
  for (int u = 0; u < 8; ++u) {
    for (int v = 0; v < 8; ++v) {
      EXPECT_NEAR(coeffs(u, v), brute_dct(p, 0, 0, u, v), 1e-12);
      if (u == 1 && v == 0) {
        EXPECT_NEAR(coeffs(u, v), 1.0, 1e-12);
      } else {
        EXPECT_NEAR(coeffs(u, v), 0.0, 1e-12);
      }
    }
  }
}

TEST(Dct, MatchesQuadrupleLoopDefinition) {
  std::mt19937_64 rng(5);
  const Plane p = random_plane(16, 24, rng);
  const Plane coeffs = block_dct(p);
  for (int by = 0; by < 16; by += 8) {
    for (int bx = 0; bx < 24; bx += 8) {
      for (int u = 0; u < 8; ++u) {
        for (int v = 0; v < 8; ++v) EXPECT_NEAR(coeffs(by + u, bx + v), brute_dct(p, by, bx, u, v), 1e-12);
      }
    }
  }
}

TEST(Dct, ParsevalPerBlockAndRoundTrip) {
  std::mt19937_64 rng(6);
  const Plane p = random_plane(32, 40, rng);
  const Plane coeffs = block_dct(p);
  for (int by = 0; by < 32; by += 8) {
    for (int bx = 0; bx < 40; bx += 8) {
      double e_pix = 0.0;
      double e_coef = 0.0;
      for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
          e_pix += p(by + y, bx + x) * p(by + y, bx + x);
          e_coef += coeffs(by + y, bx + x) * coeffs(by + y, bx + x);
        }
      }
      EXPECT_LE(std::abs(e_pix - e_coef), 1e-5 * e_pix);
    }
  }
  const Plane back = block_idct(coeffs);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_LE(std::abs(back[i] - p[i]), 1e-5);
}

TEST(Frequency, ConstantImageGivesConstantMap) {
  const CueMap f = frequency_label(RgbImage(32, 32, 0.3));
  for (double v : f.data.values()) EXPECT_EQ(v, f.data[0]);
}

TEST(Frequency, BlockConstantAndNormalized) {
  std::mt19937_64 rng(7);
  RgbImage img(32, 32, 0.5);
  for (int y = 8; y < 16; ++y) {
    for (int x = 16; x < 24; ++x) img.channels[1](y, x) = std::uniform_real_distribution<double>(0, 1)(rng);
  }
  const CueMap f = frequency_label(img);
  double lo = 1.0;
  double hi = 0.0;
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      EXPECT_EQ(f.data(y, x), f.data(y / 8 * 8, x / 8 * 8));
      lo = std::min(lo, f.data(y, x));
      hi = std::max(hi, f.data(y, x));
    }
  }
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);
  EXPECT_EQ(f.data(8, 16), 1.0);
}

TEST(Frequency, PadOrErrorOnRaggedSize) {
  const RgbImage img(20, 16, 0.1);
  EXPECT_THROW(frequency_label(img), ValidationError);
  const CueMap f = frequency_label(img, {8, true});
  EXPECT_EQ(f.height(), 20);
  EXPECT_EQ(f.width(), 16);
}

TEST(CueKinds, NamesRoundTripAndUnknownRejected) {
  for (CueKind k : kAllCueKinds) EXPECT_EQ(parse_cue_kind(cue_kind_name(k)), k);
  EXPECT_THROW(parse_cue_kind("depth"), ValidationError);
}

TEST(CueKinds, AllOutputsInUnitRangeAndMaskAligned) {
  std::mt19937_64 rng(8);
  RgbImage img;
  for (auto& ch : img.channels) ch = random_plane(32, 32, rng);
  const BinaryMask m = square_mask(32, 3, 9, 14);
  const BinaryMask near = dilate(m, 1);
  for (CueKind k : kAllCueKinds) {
    const CueMap c = generate_cue(k, img, m);
    for (std::size_t i = 0; i < c.data.size(); ++i) {
      EXPECT_GE(c.data[i], 0.0);
      EXPECT_LE(c.data[i], 1.0);
      if (k != CueKind::kFrequency && !near[i]) {
        EXPECT_EQ(c.data[i], 0.0);
      }
    }
  }
}
