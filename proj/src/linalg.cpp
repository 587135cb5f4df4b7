#include "calxfer/linalg.hpp"

#include "calxfer/error.hpp"

namespace calxfer {

PinvSolution pinv_solve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double tolerance) {
  if (a.rows() != b.rows()) throw Error("linalg", "pinv_solve row mismatch");
  PinvSolution out;
  if (a.size() == 0) {
    out.x = Eigen::MatrixXd::Zero(a.cols(), b.cols());
    return out;
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double cutoff = tolerance * (s.size() > 0 ? s(0) : 0.0);
  int rank = 0;
  while (rank < s.size() && s(rank) > cutoff) ++rank;
  out.rank = rank;
  if (rank == 0) {
    out.x = Eigen::MatrixXd::Zero(a.cols(), b.cols());
    return out;
  }
  const Eigen::MatrixXd projected = svd.matrixU().leftCols(rank).transpose() * b;
  out.x = svd.matrixV().leftCols(rank) * (s.head(rank).cwiseInverse().asDiagonal() * projected);
  return out;
}

}  // namespace calxfer
