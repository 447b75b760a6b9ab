#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gausskey/common.hpp"
#include "gausskey/core_state.hpp"

namespace gausskey {

// Rendered part maps share the grid layout of activation maps; values are
// inverse-quadratic scores in (0,1], not a distribution.
using Heatmap = ActivationMap;

struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;  // channel-major, then row-major

  static FeatureMap zeros(int channels, int height, int width) {
    FeatureMap f;
    f.channels = channels;
    f.height = height;
    f.width = width;
    f.values.assign(static_cast<std::size_t>(channels) * height * width, 0.0);
    return f;
  }

  double at(int c, int i, int j) const {
    return values[(static_cast<std::size_t>(c) * height + i) * width + j];
  }
  double& at(int c, int i, int j) {
    return values[(static_cast<std::size_t>(c) * height + i) * width + j];
  }
};

/// Per-part pooled feature vectors, K x C row-major.
struct AppearanceVectors {
  int parts = 0;
  int channels = 0;
  std::vector<double> values;

  double at(int k, int c) const {
    return values[static_cast<std::size_t>(k) * channels + c];
  }
};

inline constexpr double kDetFloor = 1e-14;

/// s(k,l) = 1 / (1 + (l-mu)^T Sigma^{-1} (l-mu)) on the pixel-center grid.
/// Covariances come from the stored factors via factor_to_cov(allow_invalid);
/// regularize_eps*I is added before inversion, which makes singular factors
/// renderable.
inline Heatmap render_heatmap(const PoseState& state, int width, int height,
                              double regularize_eps = 0.0) {
  require(width > 0 && height > 0, errc::invalid_argument,
          "grid dimensions must be positive");
  require(regularize_eps >= 0.0 && std::isfinite(regularize_eps),
          errc::invalid_argument, "regularize_eps must be nonnegative");
  const int K = state.num_parts();
  require(K > 0, errc::invalid_argument, "empty pose state");

  Heatmap out = Heatmap::zeros(K, height, width);
  for (int k = 0; k < K; ++k) {
    const Landmark& lm = state.landmarks[k];
    Mat2 sigma = factor_to_cov(lm.l11, lm.l21, lm.l22, true);
    sigma.a11 += regularize_eps;
    sigma.a22 += regularize_eps;
    const double det = sigma.det();
    require(det >= kDetFloor, errc::degenerate_covariance,
            "singular covariance for landmark", k);
    const double i11 = sigma.a22 / det;
    const double i12 = -sigma.a12 / det;
    const double i22 = sigma.a11 / det;
    for (int i = 0; i < height; ++i) {
      const double dy = pixel_center_y(i, height) - lm.mu_y;
      for (int j = 0; j < width; ++j) {
        const double dx = pixel_center_x(j, width) - lm.mu_x;
        const double q = i11 * dx * dx + 2.0 * i12 * dx * dy + i22 * dy * dy;
        out.at(k, i, j) = 1.0 / (1.0 + q);
      }
    }
  }
  return out;
}

/// Heat-weighted average of the feature map per part:
/// f_k = sum_l s(k,l) F(l) / sum_l s(k,l).
inline AppearanceVectors pool_appearance(const Heatmap& scores,
                                         const FeatureMap& features) {
  require(scores.height == features.height && scores.width == features.width,
          errc::shape_mismatch, "score and feature grids differ in size");
  AppearanceVectors out;
  out.parts = scores.parts;
  out.channels = features.channels;
  out.values.assign(static_cast<std::size_t>(out.parts) * out.channels, 0.0);
  for (int k = 0; k < scores.parts; ++k) {
    double wsum = 0.0;
    for (int i = 0; i < scores.height; ++i) {
      for (int j = 0; j < scores.width; ++j) {
        const double w = scores.at(k, i, j);
        require(std::isfinite(w) && w >= 0.0, errc::invalid_argument,
                "scores must be finite and nonnegative", k);
        wsum += w;
        for (int c = 0; c < features.channels; ++c) {
          out.values[static_cast<std::size_t>(k) * out.channels + c] +=
              w * features.at(c, i, j);
        }
      }
    }
    require(wsum > 0.0, errc::degenerate_covariance,
            "zero total score weight for part", k);
    for (int c = 0; c < features.channels; ++c) {
      out.values[static_cast<std::size_t>(k) * out.channels + c] /= wsum;
    }
  }
  return out;
}

/// Renders, reduces each part map to its s >= 0.5 core (the unit Mahalanobis
/// ellipse, point-symmetric about mu), renormalizes that core to a
/// distribution, and refits. The core cut keeps the heavy inverse-quadratic
/// tails from dragging the refit mean toward the grid center; refit Sigma is
/// not expected to match the source.
inline PoseState fit_render_roundtrip(const PoseState& state, int width,
                                      int height) {
  Heatmap rendered = render_heatmap(state, width, height);
  const std::size_t cells =
      static_cast<std::size_t>(rendered.height) * rendered.width;
  for (int k = 0; k < rendered.parts; ++k) {
    double* p = rendered.values.data() + static_cast<std::size_t>(k) * cells;
    double core_sum = 0.0;
    for (std::size_t c = 0; c < cells; ++c) {
      if (p[c] < 0.5) p[c] = 0.0;
      core_sum += p[c];
    }
    if (core_sum == 0.0) {
      // Degenerate core (all mass off-grid); fall back to the full map.
      const Heatmap full = render_heatmap(state, width, height);
      const double* q = full.values.data() + static_cast<std::size_t>(k) * cells;
      core_sum = 0.0;
      for (std::size_t c = 0; c < cells; ++c) core_sum += (p[c] = q[c]);
    }
    for (std::size_t c = 0; c < cells; ++c) p[c] /= core_sum;
  }
  rendered.normalized = true;

  std::vector<Gaussian2> refit;
  refit.reserve(rendered.parts);
  for (int k = 0; k < rendered.parts; ++k) {
    refit.push_back(fit_gaussian(rendered, k));
  }
  return pack_state(refit);
}

// ---------------------------------------------------------------- PGM export
//
// One P2 grid per part, `part_<k>.pgm`, maxval 65535, values mapped linearly
// from [0, max-cell]; `meta.json` records {K, H, W, scale} with the per-part
// scale (the max cell, so value = pixel / 65535 * scale).

namespace detail {

inline std::string part_file_name(int k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "part_%03d.pgm", k);
  return buf;
}

}  // namespace detail

inline void write_heatmap_dir(const std::string& dir, const Heatmap& map) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, errc::io_error, "cannot create directory '" + dir + "'");

  const std::size_t cells = static_cast<std::size_t>(map.height) * map.width;
  std::vector<double> scale(map.parts, 0.0);
  for (int k = 0; k < map.parts; ++k) {
    const double* p = map.values.data() + static_cast<std::size_t>(k) * cells;
    double max_cell = 0.0;
    for (std::size_t c = 0; c < cells; ++c) {
      require(std::isfinite(p[c]) && p[c] >= 0.0, errc::invalid_argument,
              "grid values must be finite and nonnegative", k);
      max_cell = std::max(max_cell, p[c]);
    }
    scale[k] = max_cell;

    const std::string path = dir + "/" + detail::part_file_name(k);
    std::ofstream os(path, std::ios::binary);
    require(os.good(), errc::io_error, "cannot open '" + path + "'");
    std::string body = "P2\n" + std::to_string(map.width) + " " +
                       std::to_string(map.height) + "\n65535\n";
    int on_line = 0;
    for (std::size_t c = 0; c < cells; ++c) {
      const int q = max_cell > 0.0
                        ? static_cast<int>(std::lround(p[c] / max_cell * 65535.0))
                        : 0;
      body += std::to_string(q);
      if (++on_line == 12) {
        body.push_back('\n');
        on_line = 0;
      } else {
        body.push_back(' ');
      }
    }
    if (on_line != 0) body.push_back('\n');
    os.write(body.data(), static_cast<std::streamsize>(body.size()));
    require(os.good(), errc::io_error, "write failed for '" + path + "'");
  }

  nlohmann::json meta;
  meta["K"] = map.parts;
  meta["H"] = map.height;
  meta["W"] = map.width;
  meta["scale"] = scale;
  const std::string meta_path = dir + "/meta.json";
  std::ofstream os(meta_path, std::ios::binary);
  require(os.good(), errc::io_error, "cannot open '" + meta_path + "'");
  os << meta.dump(2) << "\n";
  require(os.good(), errc::io_error, "write failed for '" + meta_path + "'");
}

namespace detail {

inline long next_pgm_token(std::istream& is, const std::string& path) {
  // Whitespace-delimited integer tokens; '#' starts a comment to end of line.
  char ch;
  while (is.get(ch)) {
    if (ch == '#') {
      while (is.get(ch) && ch != '\n') {
      }
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      is.unget();
      long v;
      require(static_cast<bool>(is >> v), errc::format_error,
              "bad token in '" + path + "'");
      return v;
    }
  }
  throw Error(errc::format_error, "unexpected end of '" + path + "'");
}

}  // namespace detail

inline Heatmap read_heatmap_dir(const std::string& dir) {
  const std::string meta_path = dir + "/meta.json";
  std::ifstream ms(meta_path, std::ios::binary);
  require(ms.good(), errc::io_error, "cannot open '" + meta_path + "'");
  nlohmann::json meta;
  try {
    ms >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::format_error, "bad sidecar '" + meta_path + "': " +
                                        e.what());
  }
  require(meta.contains("K") && meta.contains("H") && meta.contains("W") &&
              meta.contains("scale"),
          errc::format_error, "sidecar missing fields in '" + meta_path + "'");
  const int K = meta["K"].get<int>();
  const int H = meta["H"].get<int>();
  const int W = meta["W"].get<int>();
  const std::vector<double> scale = meta["scale"].get<std::vector<double>>();
  require(K > 0 && H > 0 && W > 0, errc::format_error,
          "bad dimensions in '" + meta_path + "'");
  require(static_cast<int>(scale.size()) == K, errc::format_error,
          "scale length != K in '" + meta_path + "'");

  Heatmap map = Heatmap::zeros(K, H, W);
  for (int k = 0; k < K; ++k) {
    const std::string path = dir + "/" + detail::part_file_name(k);
    std::ifstream is(path, std::ios::binary);
    require(is.good(), errc::io_error, "cannot open '" + path + "'");
    std::string magic;
    require(static_cast<bool>(is >> magic) && magic == "P2",
            errc::format_error, "not an ASCII PGM: '" + path + "'");
    const long w = detail::next_pgm_token(is, path);
    const long h = detail::next_pgm_token(is, path);
    const long maxval = detail::next_pgm_token(is, path);
    require(w == W && h == H, errc::format_error,
            "grid size mismatch in '" + path + "'", k);
    require(maxval == 65535, errc::format_error,
            "expected maxval 65535 in '" + path + "'");
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        const long q = detail::next_pgm_token(is, path);
        require(q >= 0 && q <= 65535, errc::format_error,
                "sample out of range in '" + path + "'");
        map.at(k, i, j) = static_cast<double>(q) / 65535.0 * scale[k];
      }
    }
  }
  return map;
}

}  // namespace gausskey
