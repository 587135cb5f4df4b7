#pragma once

#include <Eigen/Dense>

namespace calxfer {

/// Relative cut-off for singular values kept by the pseudo-inverse.
inline constexpr double kRankTolerance = 1e-10;

struct PinvSolution {
  Eigen::MatrixXd x;
  int rank = 0;
};

/// Minimum-norm least-squares solution of a x = b through the SVD of `a`,
/// discarding singular values below tolerance * sigma_max.
PinvSolution pinv_solve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double tolerance = kRankTolerance);

}  // namespace calxfer
