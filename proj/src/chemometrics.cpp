#include "calxfer/chemometrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include "calxfer/error.hpp"

namespace calxfer {

namespace {

constexpr double kComponentTolerance = 1e-12;

}  // namespace

PcrModel pcr_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int k) {
  const auto n = x.rows(), m = x.cols();
  if (y.size() != n) throw Error("chemometrics", "pcr_fit: X has " + std::to_string(n) + " rows but y has " +
                                                     std::to_string(y.size()));
  const int k_limit = static_cast<int>(std::min<Eigen::Index>(n - 1, m));
  if (k < 1 || k > k_limit)
    throw Error("chemometrics", "pcr_fit: k=" + std::to_string(k) + " outside [1, " + std::to_string(k_limit) + "]");

  PcrModel model;
  model.k = k;
  model.x_mean = x.colwise().mean();
  model.y_mean = y.mean();
  const Eigen::MatrixXd xc = x.rowwise() - model.x_mean;
  const Eigen::VectorXd yc = y.array() - model.y_mean;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(xc, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) throw Error("chemometrics", "pcr_fit: X has zero variance");

  model.loadings = svd.matrixV().leftCols(k);
  model.score_coefficients.resize(k);
  for (int c = 0; c < k; ++c) {
    model.score_coefficients(c) =
        s(c) > kComponentTolerance * s(0) ? svd.matrixU().col(c).dot(yc) / s(c) : 0.0;
  }
  model.coefficients = model.loadings * model.score_coefficients;
  return model;
}

Eigen::VectorXd pcr_predict(const PcrModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.coefficients.size()) throw Error("chemometrics", "pcr_predict: width mismatch");
  return ((x.rowwise() - model.x_mean) * model.coefficients).array() + model.y_mean;
}

Eigen::VectorXd pcr_predict_scores(const PcrModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.loadings.rows()) throw Error("chemometrics", "pcr_predict: width mismatch");
  const Eigen::MatrixXd scores = (x.rowwise() - model.x_mean) * model.loadings;
  return (scores * model.score_coefficients).array() + model.y_mean;
}

LooResult loo_select_k(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int k_max, int threads) {
  const int n = static_cast<int>(x.rows());
  const int m = static_cast<int>(x.cols());
  if (y.size() != n) throw Error("chemometrics", "loo_select_k: X/y length mismatch");
  if (n < 3) throw Error("chemometrics", "loo_select_k needs at least 3 samples");
  const int k_limit = std::min(n - 2, m);
  if (k_max < 1 || k_max > k_limit)
    throw Error("chemometrics",
                "loo_select_k: k_max=" + std::to_string(k_max) + " outside [1, " + std::to_string(k_limit) + "]");

  // squared_error(k - 1, i): held-out residual of sample i with k components.
  Eigen::MatrixXd squared_error(k_max, n);
  auto fold = [&](int held) {
    Eigen::MatrixXd xt(n - 1, m);
    Eigen::VectorXd yt(n - 1);
    for (int r = 0, t = 0; r < n; ++r) {
      if (r == held) continue;
      xt.row(t) = x.row(r);
      yt(t) = y(r);
      ++t;
    }
    const Eigen::RowVectorXd x_mean = xt.colwise().mean();
    const double y_mean = yt.mean();
    xt.rowwise() -= x_mean;
    yt.array() -= y_mean;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(xt, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& s = svd.singularValues();
    const Eigen::RowVectorXd probe = x.row(held) - x_mean;
    double prediction = y_mean;
    for (int c = 0; c < k_max; ++c) {
      if (c < s.size() && s(c) > kComponentTolerance * s(0))
        prediction += probe.dot(svd.matrixV().col(c)) * svd.matrixU().col(c).dot(yt) / s(c);
      const double r = y(held) - prediction;
      squared_error(c, held) = r * r;
    }
  };

  int n_threads = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::clamp(n_threads, 1, n);
  std::atomic<int> cursor{0};
  auto worker = [&] {
    for (int i = cursor++; i < n; i = cursor++) fold(i);
  };
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  LooResult result;
  double best = std::numeric_limits<double>::infinity();
  for (int c = 0; c < k_max; ++c) {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += squared_error(c, i);
    const double rmse = std::sqrt(sum / n);
    result.rmsecv.push_back(rmse);
    if (rmse < best) {
      best = rmse;
      result.best_k = c + 1;
    }
  }
  return result;
}

double mrmset(const Eigen::MatrixXd& master, const Eigen::MatrixXd& transformed) {
  if (master.rows() != transformed.rows() || master.cols() != transformed.cols())
    throw Error("chemometrics", "mrmset: shape mismatch");
  if (master.size() == 0) throw Error("chemometrics", "mrmset: empty input");
  const Eigen::Index n = master.rows();
  const Eigen::RowVectorXd per_position = ((master - transformed).array().square().colwise().sum() / n).sqrt();
  return per_position.mean();
}

double mrmset(const Eigen::MatrixXcd& master, const Eigen::MatrixXcd& transformed) {
  if (master.rows() != transformed.rows() || master.cols() != transformed.cols())
    throw Error("chemometrics", "mrmset: shape mismatch");
  if (master.size() == 0) throw Error("chemometrics", "mrmset: empty input");
  const Eigen::Index n = master.rows();
  const Eigen::RowVectorXd per_position = ((master - transformed).cwiseAbs2().colwise().sum() / n).cwiseSqrt();
  return per_position.mean();
}

double mrmset(const FrequencySet& master, const FrequencySet& transformed) {
  if (master.n_wavelengths != transformed.n_wavelengths) throw Error("chemometrics", "mrmset: width mismatch");
  return mrmset(master.coefficients, transformed.coefficients);
}

double rmsep(const Eigen::VectorXd& y_true, const Eigen::VectorXd& y_pred) {
  if (y_true.size() != y_pred.size()) throw Error("chemometrics", "rmsep: length mismatch");
  if (y_true.size() == 0) throw Error("chemometrics", "rmsep: empty input");
  return std::sqrt((y_true - y_pred).squaredNorm() / static_cast<double>(y_true.size()));
}

BlandAltman bland_altman(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double multiplier) {
  if (a.size() != b.size()) throw Error("chemometrics", "bland_altman: length mismatch");
  if (a.size() < 2) throw Error("chemometrics", "bland_altman needs at least 2 points");
  BlandAltman out;
  out.differences = a - b;
  out.means = (a + b) / 2.0;
  out.bias = out.differences.mean();
  const double var =
      (out.differences.array() - out.bias).square().sum() / static_cast<double>(out.differences.size() - 1);
  const double spread = multiplier * std::sqrt(var);
  out.lower = out.bias - spread;
  out.upper = out.bias + spread;
  return out;
}

}  // namespace calxfer
