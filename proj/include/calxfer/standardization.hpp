#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "calxfer/linalg.hpp"
#include "calxfer/mfpi.hpp"
#include "calxfer/provenance.hpp"

namespace calxfer {

/// Column means of the paired calibration sets, present when the model was
/// fitted with mean correction.
struct Centering {
  Eigen::RowVectorXd master_mean;
  Eigen::RowVectorXd slave_mean;
};

struct DsModel {
  Eigen::MatrixXd f_matrix;  // M x M, transferred = (slave - slave_mean) F + master_mean
  std::optional<Centering> centering;
  int effective_rank = 0;
  double rank_tolerance = kRankTolerance;
  Provenance provenance = Provenance::fitted("slave", "ds");

  int n_wavelengths() const { return static_cast<int>(f_matrix.rows()); }
};

/// Banded standardization: master column j is regressed on a window of
/// `window` consecutive slave columns starting at starts[j]. Windows are
/// centred on j and shifted inward at the spectrum edges so every column
/// sees exactly `window` slave columns.
struct PdsModel {
  int n_wavelengths = 0;
  int window = 0;
  std::vector<int> starts;
  std::vector<Eigen::VectorXd> coefficients;
  std::vector<int> effective_ranks;
  std::optional<Centering> centering;
  double rank_tolerance = kRankTolerance;
  Provenance provenance = Provenance::fitted("slave", "pds");

  Eigen::MatrixXd to_dense() const;
};

/// First column of the window used for target column j.
int pds_window_start(int column, int window, int n_wavelengths);

DsModel ds_fit(const Eigen::MatrixXd& master_cal, const Eigen::MatrixXd& slave_cal, bool mean_correction = false,
               const std::string& input_space = "slave");
Eigen::MatrixXd ds_apply(const DsModel& model, const Eigen::MatrixXd& slave);

PdsModel pds_fit(const Eigen::MatrixXd& master_cal, const Eigen::MatrixXd& slave_cal, int window,
                 bool mean_correction = false, const std::string& input_space = "slave", int threads = 0);
Eigen::MatrixXd pds_apply(const PdsModel& model, const Eigen::MatrixXd& slave);

struct WindowScore {
  int window;
  double mrmset;
};

struct WindowSearchResult {
  int best_window = 0;
  std::vector<WindowScore> scores;
};

/// Fits PDS at every odd window in [min_window, max_window] and scores the
/// transferred validation set against the master validation set. Ties go to
/// the smaller window.
WindowSearchResult pds_window_search(const Eigen::MatrixXd& master_cal, const Eigen::MatrixXd& slave_cal,
                                     const Eigen::MatrixXd& master_val, const Eigen::MatrixXd& slave_val,
                                     int min_window, int max_window, bool mean_correction = false);

void save_ds_model(const DsModel& model, const std::filesystem::path& path);
DsModel load_ds_model(const std::filesystem::path& path);
void save_pds_model(const PdsModel& model, const std::filesystem::path& path);
PdsModel load_pds_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Sequential composition of transfer models.

struct IdentityTransfer {};

using TransferStage = std::variant<IdentityTransfer, DsModel, PdsModel, MfpiModel>;

class TransferModel {
 public:
  TransferModel() = default;
  TransferModel(TransferStage stage);  // NOLINT(google-explicit-constructor)

  Eigen::MatrixXd apply(const Eigen::MatrixXd& slave) const;

  const std::vector<TransferStage>& stages() const { return stages_; }
  bool is_identity() const { return stages_.empty(); }
  /// Empty for the identity, which composes with anything.
  std::string input_space() const;
  std::string output_space() const;
  /// Stage names joined with '-', e.g. "mfpi-ds"; "identity" when empty.
  std::string label() const;

  friend TransferModel compose_transfer(const TransferModel& first, const TransferModel& second);

 private:
  std::vector<TransferStage> stages_;
};

/// first then second. Throws when second was not fitted on first's output.
TransferModel compose_transfer(const TransferModel& first, const TransferModel& second);

}  // namespace calxfer
