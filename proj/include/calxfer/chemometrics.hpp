#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "calxfer/freqdomain.hpp"

namespace calxfer {

struct PcrModel {
  Eigen::RowVectorXd x_mean;
  double y_mean = 0.0;
  Eigen::MatrixXd loadings;            // M x k
  Eigen::VectorXd score_coefficients;  // k
  Eigen::VectorXd coefficients;        // M, loadings * score_coefficients
  int k = 0;
};

/// Principal component regression on the first k components of centred X.
/// Components whose singular value falls below 1e-12 * sigma_max carry no
/// signal and get a zero score coefficient.
PcrModel pcr_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int k);

Eigen::VectorXd pcr_predict(const PcrModel& model, const Eigen::MatrixXd& x);
/// Same prediction through the scores, (X - mean) P g + y_mean.
Eigen::VectorXd pcr_predict_scores(const PcrModel& model, const Eigen::MatrixXd& x);

struct LooResult {
  int best_k = 0;
  std::vector<double> rmsecv;  // rmsecv[k - 1]
};

/// Leave-one-out RMSE for k = 1..k_max; smallest k wins ties.
LooResult loo_select_k(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int k_max, int threads = 0);

/// Mean over positions of the per-position RMS (over samples) of the
/// modulus difference. Rows are samples, columns positions.
double mrmset(const Eigen::MatrixXd& master, const Eigen::MatrixXd& transformed);
double mrmset(const Eigen::MatrixXcd& master, const Eigen::MatrixXcd& transformed);
double mrmset(const FrequencySet& master, const FrequencySet& transformed);

double rmsep(const Eigen::VectorXd& y_true, const Eigen::VectorXd& y_pred);

struct BlandAltman {
  double bias = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  Eigen::VectorXd differences;  // a - b
  Eigen::VectorXd means;        // (a + b) / 2
};

/// Positive bias means `a` exceeds `b` on average. Limits are
/// bias -/+ multiplier * sd with the n - 1 standard deviation.
BlandAltman bland_altman(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double multiplier = 1.96);

// ---------------------------------------------------------------------------

struct SplitMetrics {
  std::string split;
  int n_samples = 0;
  double mrmset = 0.0;
  double mrmset_untransferred = 0.0;
  std::optional<double> mrmset_frequency;
  std::optional<double> mrmset_frequency_untransferred;
  BlandAltman bland_altman;  // mean transferred spectrum vs mean master spectrum
};

struct PropertyMetrics {
  std::string property;
  int k = 0;
  std::vector<double> loo_curve;
  struct Entry {
    std::string split;
    double master = 0.0;          // master spectra through the master model
    double slave = 0.0;           // untransferred slave spectra
    double transferred = 0.0;
    bool failed_transfer = false; // transferred RMSEP above the slave baseline
  };
  std::vector<Entry> rmsep;
};

/// Figures of merit for one transfer run.
struct TransferReport {
  std::string method;
  std::string transfer;
  std::vector<SplitMetrics> splits;
  std::vector<PropertyMetrics> properties;
  std::vector<std::string> notes;
};

}  // namespace calxfer
