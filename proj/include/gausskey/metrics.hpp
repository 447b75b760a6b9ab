#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "gausskey/common.hpp"

namespace gausskey {

/// Single-channel image, values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  static Image zeros(int height, int width) {
    Image im;
    im.height = height;
    im.width = width;
    im.values.assign(static_cast<std::size_t>(height) * width, 0.0);
    return im;
  }

  double at(int i, int j) const {
    return values[static_cast<std::size_t>(i) * width + j];
  }
  double& at(int i, int j) {
    return values[static_cast<std::size_t>(i) * width + j];
  }
};

namespace detail {

inline void check_image(const Image& im, const char* who) {
  require(im.height > 0 && im.width > 0 &&
              im.values.size() ==
                  static_cast<std::size_t>(im.height) * im.width,
          errc::shape_mismatch, std::string(who) + ": malformed image");
  for (std::size_t c = 0; c < im.values.size(); ++c) {
    require(std::isfinite(im.values[c]) && im.values[c] >= -1e-9 &&
                im.values[c] <= 1.0 + 1e-9,
            errc::invalid_argument,
            std::string(who) + ": values must lie in [0,1]",
            static_cast<long>(c));
  }
}

}  // namespace detail

/// Reported PSNR values are capped here when written to CSV; the function
/// itself returns +inf for identical images.
inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE), peak 1.0.
inline double psnr(const Image& a, const Image& b) {
  detail::check_image(a, "psnr");
  detail::check_image(b, "psnr");
  require(a.height == b.height && a.width == b.width, errc::shape_mismatch,
          "psnr: image sizes differ");
  double sq = 0.0;
  for (std::size_t c = 0; c < a.values.size(); ++c) {
    const double d = a.values[c] - b.values[c];
    sq += d * d;
  }
  const double mse = sq / static_cast<double>(a.values.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

/// Single-scale SSIM, 11x11 Gaussian window sigma 1.5, K1=0.01, K2=0.03,
/// dynamic range 1.0, averaged over valid (fully inside) window positions.
inline double ssim(const Image& a, const Image& b) {
  detail::check_image(a, "ssim");
  detail::check_image(b, "ssim");
  require(a.height == b.height && a.width == b.width, errc::shape_mismatch,
          "ssim: image sizes differ");
  constexpr int kWin = 11;
  constexpr int kHalf = kWin / 2;
  require(a.height >= kWin && a.width >= kWin, errc::invalid_argument,
          "ssim: image smaller than 11x11 window");

  static const std::vector<double> window = [] {
    std::vector<double> w(kWin * kWin);
    double sum = 0.0;
    for (int u = 0; u < kWin; ++u) {
      for (int v = 0; v < kWin; ++v) {
        const double du = u - kHalf;
        const double dv = v - kHalf;
        w[u * kWin + v] = std::exp(-(du * du + dv * dv) / (2.0 * 1.5 * 1.5));
        sum += w[u * kWin + v];
      }
    }
    for (double& x : w) x /= sum;
    return w;
  }();

  constexpr double c1 = 0.01 * 0.01;  // (K1 L)^2
  constexpr double c2 = 0.03 * 0.03;  // (K2 L)^2
  double total = 0.0;
  long count = 0;
  for (int i = kHalf; i < a.height - kHalf; ++i) {
    for (int j = kHalf; j < a.width - kHalf; ++j) {
      double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
      for (int u = 0; u < kWin; ++u) {
        for (int v = 0; v < kWin; ++v) {
          const double w = window[u * kWin + v];
          const double x = a.at(i + u - kHalf, j + v - kHalf);
          const double y = b.at(i + u - kHalf, j + v - kHalf);
          ma += w * x;
          mb += w * y;
          saa += w * x * x;
          sbb += w * y * y;
          sab += w * x * y;
        }
      }
      const double va = saa - ma * ma;
      const double vb = sbb - mb * mb;
      const double vab = sab - ma * mb;
      total += ((2.0 * ma * mb + c1) * (2.0 * vab + c2)) /
               ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

// ---------------------------------------------------------------- regression

/// No-intercept linear map from 2K landmark coordinates to 2J keypoint
/// coordinates; both coordinate sets are origin-centered by convention, so
/// zero maps to zero.
struct RegressionMap {
  int in_dim = 0;
  int out_dim = 0;
  std::vector<double> weights;  // in_dim x out_dim, row-major

  std::vector<double> apply(std::span<const double> x) const {
    require(static_cast<int>(x.size()) == in_dim, errc::shape_mismatch,
            "regressor input dimension mismatch");
    std::vector<double> y(out_dim, 0.0);
    for (int i = 0; i < in_dim; ++i) {
      for (int j = 0; j < out_dim; ++j) {
        y[j] += x[i] * weights[static_cast<std::size_t>(i) * out_dim + j];
      }
    }
    return y;
  }
};

/// Least squares via normal equations with ridge 1e-8:
/// (X^T X + ridge I) W = X^T Y. X is rows x in_dim, Y rows x out_dim,
/// both row-major.
inline RegressionMap fit_keypoint_regressor(const std::vector<double>& X,
                                            const std::vector<double>& Y,
                                            int rows, int in_dim,
                                            int out_dim) {
  require(rows >= in_dim, errc::invalid_argument,
          "need at least as many samples as input dimensions");
  require(X.size() == static_cast<std::size_t>(rows) * in_dim &&
              Y.size() == static_cast<std::size_t>(rows) * out_dim,
          errc::shape_mismatch, "design matrix sizes disagree");

  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>>
      mx(X.data(), rows, in_dim), my(Y.data(), rows, out_dim);
  constexpr double ridge = 1e-8;
  Eigen::MatrixXd gram = mx.transpose() * mx;
  gram.diagonal().array() += ridge;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  require(ldlt.info() == Eigen::Success, errc::singular_system,
          "normal equations not solvable");
  const Eigen::MatrixXd w = ldlt.solve(mx.transpose() * my);

  // Residual orthogonality to the inputs is the least-squares certificate.
  const double ortho =
      (mx.transpose() * (my - mx * w)).cwiseAbs().maxCoeff() /
      static_cast<double>(rows);
  require(ortho <= 1e-6, errc::singular_system,
          "rank-deficient design: residual not orthogonal to inputs");

  RegressionMap map;
  map.in_dim = in_dim;
  map.out_dim = out_dim;
  map.weights.resize(static_cast<std::size_t>(in_dim) * out_dim);
  for (int i = 0; i < in_dim; ++i) {
    for (int j = 0; j < out_dim; ++j) {
      map.weights[static_cast<std::size_t>(i) * out_dim + j] = w(i, j);
    }
  }
  return map;
}

/// Fraction of keypoints whose Euclidean error is <= threshold (inclusive).
inline double pck_accuracy(const std::vector<Vec2>& predicted,
                           const std::vector<Vec2>& target, double threshold) {
  require(predicted.size() == target.size(), errc::shape_mismatch,
          "keypoint counts differ");
  require(!predicted.empty(), errc::invalid_argument, "no keypoints");
  require(threshold > 0.0 && std::isfinite(threshold), errc::invalid_argument,
          "threshold must be positive");
  long hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if ((predicted[i] - target[i]).norm() <= threshold) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

// ---------------------------------------------------------------- reports

struct FrameMetrics {
  long frame = 0;
  double psnr_db = 0.0;  // may be +inf; capped at 99 dB when written
  double ssim = 0.0;
};

inline double capped_psnr(double db) { return std::min(db, kPsnrCap); }

/// `frame,psnr_db,ssim` rows plus a trailing `mean` aggregate row. PSNR is
/// capped at 99 dB in every cell, including the mean.
inline void write_metric_csv(std::ostream& os,
                             const std::vector<FrameMetrics>& rows) {
  require(!rows.empty(), errc::invalid_argument, "no metric rows");
  char buf[128];
  std::string out = "frame,psnr_db,ssim\n";
  double psum = 0.0, ssum = 0.0;
  for (const FrameMetrics& r : rows) {
    std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g\n", r.frame,
                  capped_psnr(r.psnr_db), r.ssim);
    out += buf;
    psum += capped_psnr(r.psnr_db);
    ssum += r.ssim;
  }
  std::snprintf(buf, sizeof(buf), "mean,%.17g,%.17g\n",
                psum / static_cast<double>(rows.size()),
                ssum / static_cast<double>(rows.size()));
  out += buf;
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
}

inline nlohmann::json regressor_to_json(const RegressionMap& map) {
  nlohmann::json j;
  j["in_dim"] = map.in_dim;
  j["out_dim"] = map.out_dim;
  j["weights"] = map.weights;
  return j;
}

inline RegressionMap regressor_from_json(const nlohmann::json& j) {
  RegressionMap map;
  try {
    map.in_dim = j.at("in_dim").get<int>();
    map.out_dim = j.at("out_dim").get<int>();
    map.weights = j.at("weights").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::format_error,
                std::string("bad regressor JSON: ") + e.what());
  }
  require(map.weights.size() ==
              static_cast<std::size_t>(map.in_dim) * map.out_dim,
          errc::format_error, "regressor JSON weight length mismatch");
  return map;
}

}  // namespace gausskey
