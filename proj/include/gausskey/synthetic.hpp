#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gausskey/common.hpp"
#include "gausskey/core_state.hpp"
#include "gausskey/rng.hpp"

namespace gausskey {

enum class TrajectoryKind { linear, lissajous, pendulum };
enum class CovarianceMode { fixed, breathing, rotating };

inline const char* to_string(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::linear: return "linear";
    case TrajectoryKind::lissajous: return "lissajous";
    case TrajectoryKind::pendulum: return "pendulum";
  }
  return "?";
}

inline const char* to_string(CovarianceMode m) {
  switch (m) {
    case CovarianceMode::fixed: return "fixed";
    case CovarianceMode::breathing: return "breathing";
    case CovarianceMode::rotating: return "rotating";
  }
  return "?";
}

inline TrajectoryKind trajectory_kind_from(const std::string& s) {
  if (s == "linear") return TrajectoryKind::linear;
  if (s == "lissajous") return TrajectoryKind::lissajous;
  if (s == "pendulum") return TrajectoryKind::pendulum;
  throw Error(errc::invalid_argument, "unknown trajectory kind '" + s + "'");
}

inline CovarianceMode covariance_mode_from(const std::string& s) {
  if (s == "fixed") return CovarianceMode::fixed;
  if (s == "breathing") return CovarianceMode::breathing;
  if (s == "rotating") return CovarianceMode::rotating;
  throw Error(errc::invalid_argument, "unknown covariance mode '" + s + "'");
}

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::linear;
  int parts = 1;
  int frames = 2;
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;
  CovarianceMode covariance_mode = CovarianceMode::fixed;
};

// ---------------------------------------------------------------- pendulum
//
// theta'' = -sin(theta) (g over length fixed at 1), fixed-step RK4.

struct PendulumState {
  double theta = 0.0;
  double omega = 0.0;
};

inline PendulumState pendulum_rk4_step(const PendulumState& s, double dt) {
  auto f = [](const PendulumState& p) {
    return PendulumState{p.omega, -std::sin(p.theta)};
  };
  const PendulumState k1 = f(s);
  const PendulumState k2 = f({s.theta + 0.5 * dt * k1.theta,
                              s.omega + 0.5 * dt * k1.omega});
  const PendulumState k3 = f({s.theta + 0.5 * dt * k2.theta,
                              s.omega + 0.5 * dt * k2.omega});
  const PendulumState k4 = f({s.theta + dt * k3.theta, s.omega + dt * k3.omega});
  return {s.theta + dt / 6.0 *
                        (k1.theta + 2.0 * k2.theta + 2.0 * k3.theta + k4.theta),
          s.omega + dt / 6.0 *
                        (k1.omega + 2.0 * k2.omega + 2.0 * k3.omega + k4.omega)};
}

inline std::vector<PendulumState> pendulum_trajectory(double theta0,
                                                      double omega0, int steps,
                                                      double dt = 0.05) {
  require(steps >= 1, errc::invalid_argument, "steps must be >= 1");
  require(dt > 0.0 && std::isfinite(dt), errc::invalid_argument,
          "dt must be positive");
  std::vector<PendulumState> out;
  out.reserve(steps + 1);
  out.push_back({theta0, omega0});
  for (int i = 0; i < steps; ++i) out.push_back(pendulum_rk4_step(out.back(), dt));
  return out;
}

inline double pendulum_energy(const PendulumState& s) {
  return 0.5 * s.omega * s.omega + (1.0 - std::cos(s.theta));
}

// ---------------------------------------------------------------- generation

namespace detail {

inline Mat2 rotated_cov(double lambda1, double lambda2, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {c * c * lambda1 + s * s * lambda2, c * s * (lambda1 - lambda2),
          c * s * (lambda1 - lambda2), s * s * lambda1 + c * c * lambda2};
}

struct LandmarkPlan {
  // linear
  Vec2 mu0, v;
  // lissajous
  Vec2 center, amp, cycles, phase;
  // pendulum
  double pivot_x = 0.0, radius = 0.0;
  PendulumState pend;
  // covariance
  double lambda1 = 0.0, lambda2 = 0.0, angle0 = 0.0, breath_phase = 0.0;
};

}  // namespace detail

/// Seed-deterministic trajectory generation. Means are clamped to
/// [-0.9, 0.9]^2; covariance eigenvalues stay within [1e-4, 0.05] in every
/// mode.
inline StateSequence generate(const TrajectorySpec& spec) {
  require(spec.frames >= 2, errc::invalid_argument, "need at least 2 frames");
  require(spec.parts >= 1, errc::invalid_argument, "need at least 1 landmark");
  require(spec.noise_sigma >= 0.0 && std::isfinite(spec.noise_sigma),
          errc::invalid_argument, "noise_sigma must be nonnegative");

  Rng rng = component_rng(spec.seed, "synth");
  const int K = spec.parts;
  const int T = spec.frames;

  std::vector<detail::LandmarkPlan> plans(K);
  for (detail::LandmarkPlan& p : plans) {
    switch (spec.kind) {
      case TrajectoryKind::linear: {
        p.mu0 = {rng.uniform(-0.55, 0.55), rng.uniform(-0.55, 0.55)};
        const double vmax = 0.35 / (T - 1);
        p.v = {rng.uniform(-vmax, vmax), rng.uniform(-vmax, vmax)};
        break;
      }
      case TrajectoryKind::lissajous: {
        p.center = {rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.25)};
        p.amp = {rng.uniform(0.15, 0.55), rng.uniform(0.15, 0.55)};
        p.cycles = {rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
        p.phase = {rng.uniform(0.0, 2.0 * kPi), rng.uniform(0.0, 2.0 * kPi)};
        break;
      }
      case TrajectoryKind::pendulum: {
        p.pivot_x = rng.uniform(-0.4, 0.4);
        p.radius = rng.uniform(0.2, 0.4);
        p.pend = {rng.uniform(-2.0, 2.0), 0.0};
        break;
      }
    }
    p.lambda1 = rng.uniform(4e-4, 0.01);
    p.lambda2 = rng.uniform(4e-4, 0.01);
    p.angle0 = rng.uniform(0.0, kPi);
    p.breath_phase = rng.uniform(0.0, 2.0 * kPi);
  }

  StateSequence seq;
  seq.frames.reserve(T);
  for (int t = 0; t < T; ++t) {
    std::vector<Gaussian2> gs(K);
    for (int k = 0; k < K; ++k) {
      detail::LandmarkPlan& p = plans[k];
      Vec2 mu;
      switch (spec.kind) {
        case TrajectoryKind::linear:
          mu = {p.mu0.x + t * p.v.x, p.mu0.y + t * p.v.y};
          break;
        case TrajectoryKind::lissajous:
          mu = {p.center.x +
                    p.amp.x * std::sin(2.0 * kPi * p.cycles.x * t / T + p.phase.x),
                p.center.y +
                    p.amp.y * std::sin(2.0 * kPi * p.cycles.y * t / T + p.phase.y)};
          break;
        case TrajectoryKind::pendulum:
          mu = {p.pivot_x + p.radius * std::sin(p.pend.theta),
                -0.45 + p.radius * std::cos(p.pend.theta)};
          if (t + 1 < T) p.pend = pendulum_rk4_step(p.pend, 0.05);
          break;
      }
      if (spec.noise_sigma > 0.0) {
        mu.x += rng.normal(0.0, spec.noise_sigma);
        mu.y += rng.normal(0.0, spec.noise_sigma);
      }
      mu.x = std::clamp(mu.x, -0.9, 0.9);
      mu.y = std::clamp(mu.y, -0.9, 0.9);

      double l1 = p.lambda1, l2 = p.lambda2, angle = p.angle0;
      switch (spec.covariance_mode) {
        case CovarianceMode::fixed:
          break;
        case CovarianceMode::breathing: {
          const double f =
              1.0 + 0.5 * std::sin(2.0 * kPi * t / T + p.breath_phase);
          l1 *= f;
          l2 *= f;
          break;
        }
        case CovarianceMode::rotating:
          angle += kPi * t / T;
          break;
      }
      gs[k] = {mu, detail::rotated_cov(l1, l2, angle)};
    }
    seq.frames.push_back(pack_state(gs));
  }
  return seq;
}

}  // namespace gausskey
