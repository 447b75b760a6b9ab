#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gausskey/common.hpp"

namespace gausskey {

// ---------------------------------------------------------------- grid coords
//
// Pixel centers mapped to the normalized square [-1,1]^2, x rightward along
// columns, y downward along rows. Pixel (i,j) sits strictly inside the square.

inline double pixel_center_x(int j, int width) {
  return -1.0 + (2.0 * j + 1.0) / width;
}

inline double pixel_center_y(int i, int height) {
  return -1.0 + (2.0 * i + 1.0) / height;
}

// ---------------------------------------------------------------- types

/// K per-part nonnegative score grids of size height x width.
struct ActivationMap {
  int parts = 0;
  int height = 0;
  int width = 0;
  bool normalized = false;
  std::vector<double> values;  // part-major, then row-major

  static ActivationMap zeros(int parts, int height, int width) {
    ActivationMap m;
    m.parts = parts;
    m.height = height;
    m.width = width;
    m.values.assign(static_cast<std::size_t>(parts) * height * width, 0.0);
    return m;
  }

  std::size_t index(int k, int i, int j) const {
    return (static_cast<std::size_t>(k) * height + i) * width + j;
  }
  double at(int k, int i, int j) const { return values[index(k, i, j)]; }
  double& at(int k, int i, int j) { return values[index(k, i, j)]; }
};

struct Gaussian2 {
  Vec2 mu;
  Mat2 sigma;
};

/// Lower-triangular factor of a 2x2 covariance, positive diagonal.
struct CholFactor {
  double l11 = 1.0;
  double l21 = 0.0;
  double l22 = 1.0;
};

struct Landmark {
  double mu_x = 0.0;
  double mu_y = 0.0;
  double l11 = 1.0;
  double l21 = 0.0;
  double l22 = 1.0;
};

/// Packed pose at one timestep: K landmarks, 5 parameters each.
/// `factor_valid` is false for states produced by extrapolation or model
/// rollout whose diagonal entries are not all positive; such states still
/// yield PSD covariances through factor_to_cov(..., allow_invalid).
struct PoseState {
  std::vector<Landmark> landmarks;
  bool factor_valid = true;

  int num_parts() const { return static_cast<int>(landmarks.size()); }

  std::vector<double> packed() const {
    std::vector<double> v;
    v.reserve(landmarks.size() * 5);
    for (const Landmark& lm : landmarks) {
      v.insert(v.end(), {lm.mu_x, lm.mu_y, lm.l11, lm.l21, lm.l22});
    }
    return v;
  }

  static PoseState from_packed(std::span<const double> v) {
    require(v.size() % 5 == 0, errc::shape_mismatch,
            "packed state length must be a multiple of 5");
    require(!v.empty(), errc::invalid_argument, "empty packed state");
    PoseState s;
    s.landmarks.resize(v.size() / 5);
    for (std::size_t k = 0; k < s.landmarks.size(); ++k) {
      Landmark& lm = s.landmarks[k];
      lm.mu_x = v[5 * k];
      lm.mu_y = v[5 * k + 1];
      lm.l11 = v[5 * k + 2];
      lm.l21 = v[5 * k + 3];
      lm.l22 = v[5 * k + 4];
      if (lm.l11 <= 0.0 || lm.l22 <= 0.0) s.factor_valid = false;
    }
    return s;
  }
};

/// Time-ordered pose states with a fixed frame spacing.
struct StateSequence {
  std::vector<PoseState> frames;
  int dt = 1;

  int num_parts() const {
    return frames.empty() ? 0 : frames.front().num_parts();
  }
};

inline void require_uniform_parts(const StateSequence& seq) {
  for (std::size_t t = 1; t < seq.frames.size(); ++t) {
    require(seq.frames[t].num_parts() == seq.frames[0].num_parts(),
            errc::shape_mismatch, "frames disagree on landmark count",
            static_cast<long>(t));
  }
}

// ---------------------------------------------------------------- operations

/// Spatial softmax per part with max-subtraction: p = exp(v/t) / sum exp(v/t).
inline ActivationMap softmax_normalize(const ActivationMap& raw,
                                       double temperature = 1.0) {
  require(std::isfinite(temperature) && temperature > 0.0,
          errc::invalid_argument, "temperature must be positive");
  ActivationMap out = raw;
  const std::size_t cells = static_cast<std::size_t>(raw.height) * raw.width;
  for (int k = 0; k < raw.parts; ++k) {
    double* p = out.values.data() + static_cast<std::size_t>(k) * cells;
    double max_v = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cells; ++c) {
      require(std::isfinite(p[c]), errc::non_finite,
              "non-finite activation value",
              static_cast<long>(k * cells + c));
      max_v = std::max(max_v, p[c]);
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < cells; ++c) {
      p[c] = std::exp((p[c] - max_v) / temperature);
      sum += p[c];
    }
    for (std::size_t c = 0; c < cells; ++c) p[c] /= sum;
  }
  out.normalized = true;
  return out;
}

/// First and second spatial moments of one normalized part grid, with eps*I
/// added to the covariance.
inline Gaussian2 fit_gaussian(const ActivationMap& prob, int part,
                              double eps = 1e-4) {
  require(prob.normalized, errc::not_normalized,
          "fit_gaussian needs a normalized map");
  require(part >= 0 && part < prob.parts, errc::invalid_argument,
          "part index out of range", part);
  require(eps >= 0.0 && std::isfinite(eps), errc::invalid_argument,
          "eps must be nonnegative");

  double sum = 0.0, mx = 0.0, my = 0.0;
  for (int i = 0; i < prob.height; ++i) {
    const double y = pixel_center_y(i, prob.height);
    for (int j = 0; j < prob.width; ++j) {
      const double w = prob.at(part, i, j);
      sum += w;
      mx += w * pixel_center_x(j, prob.width);
      my += w * y;
    }
  }
  require(std::abs(sum - 1.0) <= 1e-9, errc::not_normalized,
          "part grid does not sum to 1", part);

  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (int i = 0; i < prob.height; ++i) {
    const double dy = pixel_center_y(i, prob.height) - my;
    for (int j = 0; j < prob.width; ++j) {
      const double w = prob.at(part, i, j);
      const double dx = pixel_center_x(j, prob.width) - mx;
      sxx += w * dx * dx;
      sxy += w * dx * dy;
      syy += w * dy * dy;
    }
  }
  Gaussian2 g;
  g.mu = {mx, my};
  g.sigma = {sxx + eps, sxy, sxy, syy + eps};
  require(g.sigma.a11 > 0.0 && g.sigma.det() > 0.0,
          errc::degenerate_covariance,
          "covariance not positive definite (increase eps)", part);
  return g;
}

/// Closed-form 2x2 Cholesky factorization: sigma = L L^T, L lower with
/// positive diagonal. Throws not_positive_definite with the failing pivot.
inline CholFactor cholesky_2x2(const Mat2& sigma) {
  require(sigma.finite(), errc::non_finite, "non-finite covariance entries");
  require(approx_symmetric(sigma, 1e-9), errc::invalid_argument,
          "covariance not symmetric");
  require(sigma.a11 > 0.0, errc::not_positive_definite, "first pivot <= 0", 1);
  CholFactor f;
  f.l11 = std::sqrt(sigma.a11);
  f.l21 = sigma.a12 / f.l11;
  const double pivot2 = sigma.a22 - f.l21 * f.l21;
  require(pivot2 > 0.0, errc::not_positive_definite, "second pivot <= 0", 2);
  f.l22 = std::sqrt(pivot2);
  return f;
}

/// L L^T for an arbitrary finite triple. The result is symmetric PSD for any
/// input; with allow_invalid the positive-diagonal constraint is waived,
/// which models raw model output that is not a valid Cholesky factor.
inline Mat2 factor_to_cov(double l11, double l21, double l22,
                          bool allow_invalid = false) {
  require(std::isfinite(l11) && std::isfinite(l21) && std::isfinite(l22),
          errc::non_finite, "non-finite factor entries");
  if (!allow_invalid) {
    require(l11 > 0.0 && l22 > 0.0, errc::invalid_factor,
            "factor diagonal must be positive");
  }
  const double off = l11 * l21;
  return {l11 * l11, off, off, l21 * l21 + l22 * l22};
}

inline Mat2 factor_to_cov(const CholFactor& f) {
  return factor_to_cov(f.l11, f.l21, f.l22, false);
}

inline PoseState pack_state(const std::vector<Gaussian2>& gaussians) {
  require(!gaussians.empty(), errc::invalid_argument, "empty landmark list");
  PoseState s;
  s.landmarks.reserve(gaussians.size());
  for (std::size_t k = 0; k < gaussians.size(); ++k) {
    require(approx_symmetric(gaussians[k].sigma, 1e-12), errc::invalid_argument,
            "covariance not symmetric", static_cast<long>(k));
    const CholFactor f = cholesky_2x2(gaussians[k].sigma);
    s.landmarks.push_back(
        {gaussians[k].mu.x, gaussians[k].mu.y, f.l11, f.l21, f.l22});
  }
  return s;
}

inline std::vector<Gaussian2> unpack_state(const PoseState& state) {
  require(!state.landmarks.empty(), errc::invalid_argument,
          "empty pose state");
  std::vector<Gaussian2> out;
  out.reserve(state.landmarks.size());
  for (const Landmark& lm : state.landmarks) {
    Gaussian2 g;
    g.mu = {lm.mu_x, lm.mu_y};
    g.sigma = factor_to_cov(lm.l11, lm.l21, lm.l22, false);
    out.push_back(g);
  }
  return out;
}

// ---------------------------------------------------------------- CSV format
//
// Header `t,k,mu_x,mu_y,l11,l21,l22`, one row per (frame, landmark), rows
// sorted by (t, k), 17 significant digits, LF line endings.

namespace detail {

inline void append_double(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v,
                           std::chars_format::general, 17);
  out.append(buf, res.ptr);
}

inline double parse_double(std::string_view s, long row) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(),
          errc::format_error, "bad numeric field '" + std::string(s) + "'",
          row);
  return v;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

}  // namespace detail

inline constexpr const char* kStateCsvHeader = "t,k,mu_x,mu_y,l11,l21,l22";

inline void write_state_csv(std::ostream& os, const StateSequence& seq) {
  require_uniform_parts(seq);
  std::string out(kStateCsvHeader);
  out.push_back('\n');
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    const PoseState& st = seq.frames[t];
    for (int k = 0; k < st.num_parts(); ++k) {
      const Landmark& lm = st.landmarks[k];
      out += std::to_string(static_cast<long long>(t) * seq.dt);
      out.push_back(',');
      out += std::to_string(k);
      for (double v : {lm.mu_x, lm.mu_y, lm.l11, lm.l21, lm.l22}) {
        out.push_back(',');
        detail::append_double(out, v);
      }
      out.push_back('\n');
    }
  }
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
}

inline StateSequence read_state_csv(std::istream& is) {
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), errc::format_error,
          "empty state CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == kStateCsvHeader, errc::format_error,
          "unexpected header '" + line + "'");

  StateSequence seq;
  long row = 1;
  long cur_t = -1;
  long prev_t = -1;
  int expected_k = 0;
  PoseState cur;
  auto flush = [&] {
    if (cur_t < 0) return;
    if (!seq.frames.empty()) {
      require(cur.num_parts() == seq.frames[0].num_parts(),
              errc::format_error, "frame landmark count changed", cur_t);
    }
    seq.frames.push_back(cur);
    cur.landmarks.clear();
    cur.factor_valid = true;
  };
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_fields(line);
    require(f.size() == 7, errc::format_error, "expected 7 fields", row);
    const long t = static_cast<long>(detail::parse_double(f[0], row));
    const long k = static_cast<long>(detail::parse_double(f[1], row));
    if (t != cur_t) {
      require(t > cur_t, errc::format_error, "rows not sorted by t", row);
      flush();
      prev_t = cur_t;
      cur_t = t;
      if (seq.frames.size() == 1 && prev_t >= 0) {
        seq.dt = static_cast<int>(t - prev_t);
      } else if (seq.frames.size() > 1) {
        require(t - prev_t == seq.dt, errc::format_error,
                "nonuniform frame spacing", row);
      }
      expected_k = 0;
    }
    require(k == expected_k, errc::format_error, "rows not sorted by k", row);
    ++expected_k;
    Landmark lm;
    lm.mu_x = detail::parse_double(f[2], row);
    lm.mu_y = detail::parse_double(f[3], row);
    lm.l11 = detail::parse_double(f[4], row);
    lm.l21 = detail::parse_double(f[5], row);
    lm.l22 = detail::parse_double(f[6], row);
    if (lm.l11 <= 0.0 || lm.l22 <= 0.0) cur.factor_valid = false;
    cur.landmarks.push_back(lm);
    ++row;
  }
  flush();
  require(!seq.frames.empty(), errc::format_error, "state CSV has no rows");
  return seq;
}

inline void save_state_csv(const std::string& path, const StateSequence& seq) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), errc::io_error, "cannot open '" + path + "' for write");
  write_state_csv(os, seq);
  require(os.good(), errc::io_error, "write failed for '" + path + "'");
}

inline StateSequence load_state_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), errc::io_error, "cannot open '" + path + "'");
  return read_state_csv(is);
}

}  // namespace gausskey
