#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "pgmm/errors.hpp"
#include "pgmm/stats.hpp"

namespace pgmm {

/// Product Gaussian kernel density estimate over posterior draws, Silverman
/// bandwidth per coordinate: h_j = sd_j * (4/(d+2))^(1/(d+4)) * n^(-1/(d+4)).
class KernelDensity {
 public:
  explicit KernelDensity(Eigen::MatrixXd points) : pts_(std::move(points)) {
    const Eigen::Index n = pts_.rows();
    const Eigen::Index d = pts_.cols();
    if (n < 2) throw ContractError("KernelDensity: need at least 2 points");
    bw_.resize(d);
    degenerate_ = true;
    const double factor = std::pow(4.0 / (static_cast<double>(d) + 2.0),
                                   1.0 / (static_cast<double>(d) + 4.0)) *
                          std::pow(static_cast<double>(n), -1.0 / (static_cast<double>(d) + 4.0));
    for (Eigen::Index j = 0; j < d; ++j) {
      const double m = pts_.col(j).mean();
      const double sd =
          std::sqrt((pts_.col(j).array() - m).square().sum() / (static_cast<double>(n) - 1.0));
      bw_[j] = sd * factor;
      if (bw_[j] > 0.0) degenerate_ = false;
    }
    if (!degenerate_) {
      for (Eigen::Index j = 0; j < d; ++j)
        if (!(bw_[j] > 0.0)) bw_[j] = 1e-12;  // constant coordinate inside a non-degenerate cloud
      log_norm_ = -0.5 * static_cast<double>(d) * kLog2Pi - bw_.array().log().sum() -
                  std::log(static_cast<double>(n));
    }
  }

  bool degenerate() const { return degenerate_; }
  const Eigen::VectorXd& bandwidth() const { return bw_; }

  double density(const Eigen::VectorXd& x) const {
    if (x.size() != pts_.cols()) throw ContractError("KernelDensity: dimension mismatch");
    if (degenerate_) return (x.transpose() == pts_.row(0)) ? std::numeric_limits<double>::infinity() : 0.0;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < pts_.rows(); ++i) {
      double s = 0.0;
      for (Eigen::Index j = 0; j < pts_.cols(); ++j) {
        const double z = (x[j] - pts_(i, j)) / bw_[j];
        s += z * z;
      }
      acc += std::exp(-0.5 * s);
    }
    return acc * std::exp(log_norm_);
  }

  /// Density at every stored point (the values PR_T thresholds against).
  Eigen::VectorXd density_at_points() const {
    Eigen::VectorXd out(pts_.rows());
    for (Eigen::Index i = 0; i < pts_.rows(); ++i) out[i] = density(pts_.row(i).transpose());
    return out;
  }

 private:
  Eigen::MatrixXd pts_;
  Eigen::VectorXd bw_;
  double log_norm_ = 0.0;
  bool degenerate_ = false;
};

}  // namespace pgmm
