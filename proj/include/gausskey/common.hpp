#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace gausskey {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr double kPi = 3.14159265358979323846;

enum class errc {
  non_finite,
  not_normalized,
  not_positive_definite,
  degenerate_covariance,
  invalid_factor,
  shape_mismatch,
  invalid_argument,
  singular_system,
  divergence,
  rollout_aborted,
  io_error,
  format_error,
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::non_finite: return "non_finite";
    case errc::not_normalized: return "not_normalized";
    case errc::not_positive_definite: return "not_positive_definite";
    case errc::degenerate_covariance: return "degenerate_covariance";
    case errc::invalid_factor: return "invalid_factor";
    case errc::shape_mismatch: return "shape_mismatch";
    case errc::invalid_argument: return "invalid_argument";
    case errc::singular_system: return "singular_system";
    case errc::divergence: return "divergence";
    case errc::rollout_aborted: return "rollout_aborted";
    case errc::io_error: return "io_error";
    case errc::format_error: return "format_error";
  }
  return "unknown";
}

/// Library error. `index` identifies the offending element where one exists
/// (cell index, failing pivot, landmark id, timestep); -1 otherwise.
class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& message, long index = -1)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code),
        index_(index) {}

  errc code() const noexcept { return code_; }
  long index() const noexcept { return index_; }

 private:
  errc code_;
  long index_;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double norm() const { return std::sqrt(dot(*this)); }
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }

/// Row-major 2x2 matrix.
struct Mat2 {
  double a11 = 0.0, a12 = 0.0;
  double a21 = 0.0, a22 = 0.0;

  static Mat2 identity() { return {1.0, 0.0, 0.0, 1.0}; }
  double det() const { return a11 * a22 - a12 * a21; }
  bool finite() const {
    return std::isfinite(a11) && std::isfinite(a12) && std::isfinite(a21) &&
           std::isfinite(a22);
  }
};

inline Vec2 operator*(const Mat2& m, Vec2 v) {
  return {m.a11 * v.x + m.a12 * v.y, m.a21 * v.x + m.a22 * v.y};
}

inline bool approx_symmetric(const Mat2& m, double tol) {
  return std::abs(m.a12 - m.a21) <= tol;
}

inline void require(bool cond, errc code, const std::string& message,
                    long index = -1) {
  if (!cond) throw Error(code, message, index);
}

}  // namespace gausskey
