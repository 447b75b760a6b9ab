#pragma once

#include <cmath>

#include "gausskey/common.hpp"
#include "gausskey/core_state.hpp"

namespace gausskey {

/// Componentwise linear blend of all 5K landmark parameters:
/// (1-alpha) * a + alpha * b, alpha 0 = a, 1 = b.
///
/// Outside [0,1] a blended diagonal entry can go nonpositive; the result is
/// then tagged rather than rejected, since L L^T is PSD regardless.
inline PoseState lerp_state(const PoseState& a, const PoseState& b,
                            double alpha) {
  require(std::isfinite(alpha), errc::invalid_argument, "non-finite alpha");
  require(a.num_parts() == b.num_parts(), errc::shape_mismatch,
          "endpoint landmark counts differ");
  require(a.num_parts() > 0, errc::invalid_argument, "empty endpoints");
  require(a.factor_valid && b.factor_valid, errc::invalid_factor,
          "endpoints must carry valid factors");
  if (alpha == 0.0) return a;
  if (alpha == 1.0) return b;

  const double w0 = 1.0 - alpha;
  PoseState out;
  out.landmarks.resize(a.landmarks.size());
  for (std::size_t k = 0; k < a.landmarks.size(); ++k) {
    const Landmark& la = a.landmarks[k];
    const Landmark& lb = b.landmarks[k];
    Landmark& lo = out.landmarks[k];
    lo.mu_x = w0 * la.mu_x + alpha * lb.mu_x;
    lo.mu_y = w0 * la.mu_y + alpha * lb.mu_y;
    lo.l11 = w0 * la.l11 + alpha * lb.l11;
    lo.l21 = w0 * la.l21 + alpha * lb.l21;
    lo.l22 = w0 * la.l22 + alpha * lb.l22;
    if (lo.l11 <= 0.0 || lo.l22 <= 0.0) out.factor_valid = false;
  }
  return out;
}

/// steps frames at alpha = i/(steps-1); endpoints are a and b exactly.
inline StateSequence interpolate_sequence(const PoseState& a,
                                          const PoseState& b, int steps) {
  require(steps >= 2, errc::invalid_argument, "steps must be >= 2");
  StateSequence seq;
  seq.frames.reserve(steps);
  for (int i = 0; i < steps; ++i) {
    seq.frames.push_back(lerp_state(a, b, static_cast<double>(i) / (steps - 1)));
  }
  return seq;
}

}  // namespace gausskey
