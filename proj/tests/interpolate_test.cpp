#include <cmath>
#include <cstring>
#include <vector>

#include <gtest/gtest.h>

#include "gausskey/heatmap.hpp"
#include "gausskey/interpolate.hpp"
#include "gausskey/rng.hpp"

namespace gk = gausskey;

namespace {

gk::PoseState random_valid_state(gk::Rng& rng, int parts) {
  std::vector<gk::Gaussian2> gs;
  for (int k = 0; k < parts; ++k) {
    const double a = rng.uniform(-1.0, 1.0), b = rng.uniform(-1.0, 1.0);
    const double c = rng.uniform(-1.0, 1.0), d = rng.uniform(-1.0, 1.0);
    gk::Gaussian2 g;
    g.mu = {rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)};
    g.sigma.a11 = 0.02 * (a * a + c * c) + 1e-4;
    g.sigma.a12 = 0.02 * (a * b + c * d);
    g.sigma.a21 = g.sigma.a12;
    g.sigma.a22 = 0.02 * (b * b + d * d) + 1e-4;
    gs.push_back(g);
  }
  return gk::pack_state(gs);
}

bool bitwise_equal(const gk::PoseState& a, const gk::PoseState& b) {
  const std::vector<double> pa = a.packed(), pb = b.packed();
  return pa.size() == pb.size() &&
         std::memcmp(pa.data(), pb.data(), pa.size() * sizeof(double)) == 0 &&
         a.factor_valid == b.factor_valid;
}

// Smallest eigenvalue of a symmetric 2x2, closed form.
double min_eig(const gk::Mat2& m) {
  const double tr = m.a11 + m.a22;
  const double gap = std::sqrt((m.a11 - m.a22) * (m.a11 - m.a22) +
                               4.0 * m.a12 * m.a12);
  return 0.5 * (tr - gap);
}

}  // namespace

TEST(LerpState, EndpointsExactBitwise) {
  gk::Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const gk::PoseState a = random_valid_state(rng, 3);
    const gk::PoseState b = random_valid_state(rng, 3);
    EXPECT_TRUE(bitwise_equal(gk::lerp_state(a, b, 0.0), a));
    EXPECT_TRUE(bitwise_equal(gk::lerp_state(a, b, 1.0), b));
  }
}

TEST(LerpState, MidpointByHand) {
  const std::vector<double> pa = {0, 0, 1, 0, 1};
  const std::vector<double> pb = {2, 2, 3, 0, 3};
  const gk::PoseState a = gk::PoseState::from_packed(pa);
  const gk::PoseState b = gk::PoseState::from_packed(pb);
  const gk::PoseState mid = gk::lerp_state(a, b, 0.5);
  const std::vector<double> expect = {1, 1, 2, 0, 2};
  EXPECT_EQ(mid.packed(), expect);
  EXPECT_TRUE(mid.factor_valid);

  const gk::PoseState ext = gk::lerp_state(a, b, 1.5);
  const std::vector<double> expect_ext = {3, 3, 4, 0, 4};
  EXPECT_EQ(ext.packed(), expect_ext);
  EXPECT_TRUE(ext.factor_valid);
}

TEST(LerpState, SymmetryAtDyadicAlpha) {
  gk::Rng rng(32);
  for (int trial = 0; trial < 50; ++trial) {
    const gk::PoseState a = random_valid_state(rng, 2);
    const gk::PoseState b = random_valid_state(rng, 2);
    for (int k = 0; k <= 16; ++k) {
      const double alpha = k / 16.0;
      const std::vector<double> fwd = gk::lerp_state(a, b, alpha).packed();
      const std::vector<double> rev =
          gk::lerp_state(b, a, 1.0 - alpha).packed();
      ASSERT_EQ(fwd.size(), rev.size());
      // Equal up to one rounding of the unit-scale products; the blend can
      // cancel to near zero, so the bound is absolute, not relative.
      for (std::size_t i = 0; i < fwd.size(); ++i) {
        EXPECT_NEAR(fwd[i], rev[i], 5e-16);
      }
    }
  }
}

TEST(LerpState, ConvexBlendsStayValid) {
  gk::Rng rng(33);
  for (int trial = 0; trial < 1000; ++trial) {
    const gk::PoseState a = random_valid_state(rng, 2);
    const gk::PoseState b = random_valid_state(rng, 2);
    for (int k = 0; k <= 10; ++k) {
      const gk::PoseState mid = gk::lerp_state(a, b, k / 10.0);
      EXPECT_TRUE(mid.factor_valid);
      for (int part = 0; part < 2; ++part) {
        EXPECT_GT(mid.landmarks[part].l11, 0.0);
        EXPECT_GT(mid.landmarks[part].l22, 0.0);
        // Round trip through pack/unpack must agree with the blend.
        const gk::Mat2 cov = gk::factor_to_cov(
            mid.landmarks[part].l11, mid.landmarks[part].l21,
            mid.landmarks[part].l22);
        EXPECT_GT(min_eig(cov), 0.0);
      }
    }
  }
}

TEST(LerpState, ExtrapolationPsdAndTagged) {
  gk::Rng rng(34);
  long tagged = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const gk::PoseState a = random_valid_state(rng, 1);
    const gk::PoseState b = random_valid_state(rng, 1);
    for (int k = -10; k <= 10; ++k) {
      const double alpha = k / 2.0;  // [-5, 5]
      const gk::PoseState s = gk::lerp_state(a, b, alpha);
      const gk::Landmark& lm = s.landmarks[0];
      const gk::Mat2 cov = gk::factor_to_cov(lm.l11, lm.l21, lm.l22, true);
      EXPECT_GE(min_eig(cov), -1e-12);
      const bool positive = lm.l11 > 0.0 && lm.l22 > 0.0;
      EXPECT_EQ(s.factor_valid, positive);
      if (!positive) ++tagged;
    }
  }
  EXPECT_GT(tagged, 0);
}

TEST(LerpState, RejectsBadInput) {
  gk::Rng rng(35);
  const gk::PoseState a = random_valid_state(rng, 2);
  const gk::PoseState b = random_valid_state(rng, 3);
  EXPECT_THROW(gk::lerp_state(a, b, 0.5), gk::Error);
  const gk::PoseState c = random_valid_state(rng, 2);
  EXPECT_THROW(gk::lerp_state(a, c, std::nan("")), gk::Error);
  gk::PoseState invalid = c;
  invalid.factor_valid = false;
  EXPECT_THROW(gk::lerp_state(a, invalid, 0.5), gk::Error);
}

TEST(InterpolateSequence, TwoStepsAreEndpoints) {
  gk::Rng rng(36);
  const gk::PoseState a = random_valid_state(rng, 2);
  const gk::PoseState b = random_valid_state(rng, 2);
  const gk::StateSequence seq = gk::interpolate_sequence(a, b, 2);
  ASSERT_EQ(seq.frames.size(), 2u);
  EXPECT_TRUE(bitwise_equal(seq.frames[0], a));
  EXPECT_TRUE(bitwise_equal(seq.frames[1], b));
}

TEST(InterpolateSequence, ThirtyFramesUniformSpacing) {
  gk::Rng rng(37);
  const gk::PoseState a = random_valid_state(rng, 2);
  const gk::PoseState b = random_valid_state(rng, 2);
  const gk::StateSequence seq = gk::interpolate_sequence(a, b, 30);
  ASSERT_EQ(seq.frames.size(), 30u);
  const std::vector<double> pa = a.packed(), pb = b.packed();
  for (std::size_t d = 0; d < pa.size(); ++d) {
    const double step0 = seq.frames[1].packed()[d] - seq.frames[0].packed()[d];
    for (std::size_t t = 1; t + 1 < seq.frames.size(); ++t) {
      const double step =
          seq.frames[t + 1].packed()[d] - seq.frames[t].packed()[d];
      EXPECT_NEAR(step, step0, 1e-12);
    }
  }
}

TEST(InterpolateSequence, OddStepsMidpointMatchesLerp) {
  gk::Rng rng(38);
  const gk::PoseState a = random_valid_state(rng, 3);
  const gk::PoseState b = random_valid_state(rng, 3);
  const gk::StateSequence seq = gk::interpolate_sequence(a, b, 31);
  EXPECT_TRUE(bitwise_equal(seq.frames[15], gk::lerp_state(a, b, 0.5)));
}

TEST(InterpolateSequence, RejectsFewerThanTwoSteps) {
  gk::Rng rng(39);
  const gk::PoseState a = random_valid_state(rng, 1);
  const gk::PoseState b = random_valid_state(rng, 1);
  EXPECT_THROW(gk::interpolate_sequence(a, b, 1), gk::Error);
  EXPECT_THROW(gk::interpolate_sequence(a, b, 0), gk::Error);
}

TEST(InterpolateSequence, MidpointArgmaxNearArgmaxMidpoint) {
  gk::Gaussian2 ga, gb;
  ga.mu = {-0.4, -0.25};
  gb.mu = {0.45, 0.3};
  ga.sigma = {0.004, 0.0, 0.0, 0.004};
  gb.sigma = {0.006, 0.001, 0.001, 0.005};
  const gk::PoseState a = gk::pack_state({ga});
  const gk::PoseState b = gk::pack_state({gb});
  const gk::PoseState mid = gk::lerp_state(a, b, 0.5);

  auto argmax = [](const gk::Heatmap& map) {
    int best_i = 0, best_j = 0;
    double best = -1.0;
    for (int i = 0; i < map.height; ++i) {
      for (int j = 0; j < map.width; ++j) {
        if (map.at(0, i, j) > best) {
          best = map.at(0, i, j);
          best_i = i;
          best_j = j;
        }
      }
    }
    return std::pair<int, int>(best_i, best_j);
  };
  const auto [ia, ja] = argmax(gk::render_heatmap(a, 64, 64));
  const auto [ib, jb] = argmax(gk::render_heatmap(b, 64, 64));
  const auto [im, jm] = argmax(gk::render_heatmap(mid, 64, 64));
  EXPECT_LE(std::abs(im - (ia + ib) / 2), 1);
  EXPECT_LE(std::abs(jm - (ja + jb) / 2), 1);
}
