#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "gausskey/common.hpp"
#include "gausskey/core_state.hpp"
#include "gausskey/rng.hpp"

namespace gausskey {

/// Affine part of a warp, row-major 2x3, last column translation.
struct Affine2 {
  double m[6] = {1.0, 0.0, 0.0, 0.0, 1.0, 0.0};

  Vec2 apply(const Vec2& p) const {
    return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]};
  }
};

struct TpsWarp {
  std::vector<Vec2> control_src;
  std::vector<Vec2> control_dst;
  std::vector<Vec2> weights;
  Affine2 affine;
  double lambda = 0.0;
};

/// U(r) = r^2 log r^2 expressed in terms of r^2; U(0) = 0.
inline double tps_kernel_r2(double r2) {
  return r2 > 0.0 ? r2 * std::log(r2) : 0.0;
}

/// Standard TPS fit: solve [[K + lambda*I, P], [P^T, 0]] [[W],[A]] = [[V],[0]]
/// with P rows [1, x, y]. Side conditions sum(w) = 0 and sum(w .* src) = 0
/// come out of the solve.
inline TpsWarp tps_fit(const std::vector<Vec2>& src,
                       const std::vector<Vec2>& dst, double lambda = 1e-6) {
  const int n = static_cast<int>(src.size());
  require(n >= 3, errc::invalid_argument, "need at least 3 control points");
  require(src.size() == dst.size(), errc::shape_mismatch,
          "control point counts differ");
  require(lambda >= 0.0 && std::isfinite(lambda), errc::invalid_argument,
          "lambda must be nonnegative");
  for (int i = 0; i < n; ++i) {
    require(std::isfinite(src[i].x) && std::isfinite(src[i].y) &&
                std::isfinite(dst[i].x) && std::isfinite(dst[i].y),
            errc::non_finite, "non-finite control point", i);
  }

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n + 3, n + 3);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n + 3, 2);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const Vec2 d = src[i] - src[j];
      A(i, j) = tps_kernel_r2(d.dot(d));
    }
    A(i, i) += lambda;
    A(i, n) = A(n, i) = 1.0;
    A(i, n + 1) = A(n + 1, i) = src[i].x;
    A(i, n + 2) = A(n + 2, i) = src[i].y;
    b(i, 0) = dst[i].x;
    b(i, 1) = dst[i].y;
  }

  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  require(lu.isInvertible(), errc::singular_system,
          "degenerate control points (collinear or duplicated)");
  const Eigen::MatrixXd x = lu.solve(b);
  const double residual = (A * x - b).cwiseAbs().maxCoeff();
  require(residual <= 1e-8, errc::singular_system,
          "TPS system residual too large");

  TpsWarp w;
  w.control_src = src;
  w.control_dst = dst;
  w.lambda = lambda;
  w.weights.resize(n);
  for (int i = 0; i < n; ++i) w.weights[i] = {x(i, 0), x(i, 1)};
  w.affine.m[2] = x(n, 0);
  w.affine.m[0] = x(n + 1, 0);
  w.affine.m[1] = x(n + 2, 0);
  w.affine.m[5] = x(n, 1);
  w.affine.m[3] = x(n + 1, 1);
  w.affine.m[4] = x(n + 2, 1);
  return w;
}

/// f(p) = A [p;1] + sum_i w_i U(|p - src_i|).
inline Vec2 tps_apply(const TpsWarp& warp, const Vec2& p) {
  require(std::isfinite(p.x) && std::isfinite(p.y), errc::non_finite,
          "non-finite point");
  Vec2 out = warp.affine.apply(p);
  for (std::size_t i = 0; i < warp.control_src.size(); ++i) {
    const Vec2 d = p - warp.control_src[i];
    const double u = tps_kernel_r2(d.dot(d));
    out.x += warp.weights[i].x * u;
    out.y += warp.weights[i].y * u;
  }
  return out;
}

inline std::vector<Vec2> tps_apply(const TpsWarp& warp,
                                   const std::vector<Vec2>& points) {
  std::vector<Vec2> out;
  out.reserve(points.size());
  for (const Vec2& p : points) out.push_back(tps_apply(warp, p));
  return out;
}

/// g x g control grid over [-1,1]^2 with i.i.d. N(0, sigma) displacements,
/// clamped to 4*sigma per component and to the square. Deterministic per seed.
inline TpsWarp random_tps(int grid, double sigma, std::uint64_t seed,
                          double lambda = 1e-6) {
  require(grid >= 2, errc::invalid_argument, "grid must be >= 2");
  require(sigma >= 0.0 && std::isfinite(sigma), errc::invalid_argument,
          "sigma must be nonnegative");
  Rng rng = component_rng(seed, "tps");
  std::vector<Vec2> src, dst;
  src.reserve(static_cast<std::size_t>(grid) * grid);
  dst.reserve(src.capacity());
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const Vec2 p = {-1.0 + 2.0 * gx / (grid - 1),
                      -1.0 + 2.0 * gy / (grid - 1)};
      const double cap = 4.0 * sigma;
      const double ddx = std::clamp(rng.normal(0.0, sigma), -cap, cap);
      const double ddy = std::clamp(rng.normal(0.0, sigma), -cap, cap);
      src.push_back(p);
      dst.push_back(
          {std::clamp(p.x + ddx, -1.0, 1.0), std::clamp(p.y + ddy, -1.0, 1.0)});
    }
  }
  return tps_fit(src, dst, lambda);
}

/// Fit of the reverse mapping (dst -> src); for small displacements this
/// approximates the true inverse and serves as the pull-back map for grids.
inline TpsWarp tps_inverse(const TpsWarp& warp, double lambda = 1e-6) {
  return tps_fit(warp.control_dst, warp.control_src, lambda);
}

/// Bilinear sample of one part grid at normalized coords, zero outside.
inline double bilinear_sample(const ActivationMap& map, int part, double x,
                              double y) {
  const double jf = (x + 1.0) * map.width / 2.0 - 0.5;
  const double ifl = (y + 1.0) * map.height / 2.0 - 0.5;
  const int j0 = static_cast<int>(std::floor(jf));
  const int i0 = static_cast<int>(std::floor(ifl));
  const double fx = jf - j0;
  const double fy = ifl - i0;
  auto cell = [&](int i, int j) -> double {
    if (i < 0 || i >= map.height || j < 0 || j >= map.width) return 0.0;
    return map.at(part, i, j);
  };
  return (1.0 - fy) * ((1.0 - fx) * cell(i0, j0) + fx * cell(i0, j0 + 1)) +
         fy * ((1.0 - fx) * cell(i0 + 1, j0) + fx * cell(i0 + 1, j0 + 1));
}

/// Pull-back grid warp: out(p) = in(pull(p)) with bilinear sampling and zero
/// padding. To push grid mass forward through f, pass tps_inverse(f).
inline ActivationMap warp_grid(const ActivationMap& map, const TpsWarp& pull) {
  ActivationMap out = ActivationMap::zeros(map.parts, map.height, map.width);
  for (int i = 0; i < map.height; ++i) {
    for (int j = 0; j < map.width; ++j) {
      const Vec2 q = tps_apply(
          pull, {pixel_center_x(j, map.width), pixel_center_y(i, map.height)});
      for (int k = 0; k < map.parts; ++k) {
        out.at(k, i, j) = bilinear_sample(map, k, q.x, q.y);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- JSON form

inline nlohmann::json warp_to_json(const TpsWarp& warp) {
  auto points = [](const std::vector<Vec2>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (const Vec2& p : v) arr.push_back({p.x, p.y});
    return arr;
  };
  nlohmann::json j;
  j["control_src"] = points(warp.control_src);
  j["control_dst"] = points(warp.control_dst);
  j["weights"] = points(warp.weights);
  j["affine"] = std::vector<double>(warp.affine.m, warp.affine.m + 6);
  j["lambda"] = warp.lambda;
  return j;
}

inline TpsWarp warp_from_json(const nlohmann::json& j) {
  auto points = [](const nlohmann::json& arr) {
    std::vector<Vec2> v;
    for (const auto& p : arr) v.push_back({p.at(0).get<double>(),
                                           p.at(1).get<double>()});
    return v;
  };
  TpsWarp w;
  try {
    w.control_src = points(j.at("control_src"));
    w.control_dst = points(j.at("control_dst"));
    w.weights = points(j.at("weights"));
    const auto aff = j.at("affine").get<std::vector<double>>();
    require(aff.size() == 6, errc::format_error, "affine must have 6 entries");
    std::copy(aff.begin(), aff.end(), w.affine.m);
    w.lambda = j.at("lambda").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::format_error, std::string("bad warp JSON: ") + e.what());
  }
  require(w.control_src.size() == w.control_dst.size() &&
              w.control_src.size() == w.weights.size(),
          errc::format_error, "warp JSON arrays disagree in length");
  return w;
}

inline void save_warp_json(const std::string& path, const TpsWarp& warp) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), errc::io_error, "cannot open '" + path + "'");
  os << warp_to_json(warp).dump(2) << "\n";
  require(os.good(), errc::io_error, "write failed for '" + path + "'");
}

inline TpsWarp load_warp_json(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), errc::io_error, "cannot open '" + path + "'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::format_error, "bad warp JSON '" + path + "': " +
                                        e.what());
  }
  return warp_from_json(j);
}

}  // namespace gausskey
