#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "calxfer/freqdomain.hpp"
#include "calxfer/moebius.hpp"
#include "calxfer/provenance.hpp"

namespace calxfer {

struct BinRange {
  int first = 0;
  int last = 0;  // inclusive

  bool operator==(const BinRange&) const = default;
};

struct MfpiConfig {
  double tolerance = 1e-6;  // RMSE stop threshold in Cayley space
  int max_iter = 100;
  std::vector<std::string> reject;
  /// nullopt transforms every bin; an empty list transforms none.
  std::optional<std::vector<BinRange>> bins;

  /// Throws when tolerance/max_iter are out of range or the ranges overlap
  /// or leave [0, n_bins - 1].
  void validate(int n_bins) const;
  bool selects(int bin) const;

  bool operator==(const MfpiConfig&) const = default;
};

struct MfpiBinFit {
  int bin = 0;
  FpiMap map;
  double best_rmse = 0.0;
  double initial_rmse = 0.0;  // +inf when the nearest-four quad was degenerate
  int iterations = 0;
  std::array<std::string, 4> quad_sample_ids;  // CCW order of the slave points
};

struct MfpiModel {
  int n_wavelengths = 0;
  int n_bins = 0;
  MfpiConfig config;
  std::vector<MfpiBinFit> fitted;  // sorted by bin
  std::vector<int> pass_through;   // sorted
  int degenerate_bins = 0;         // selected bins that ended up pass-through
  std::vector<std::string> warnings;
  Provenance provenance;

  const MfpiBinFit* find(int bin) const;
};

/// Per-bin trace of retained best RMSE (one entry per scored quad).
struct MfpiDiagnostics {
  std::vector<std::vector<double>> retained_rmse;  // indexed by bin
};

/// Fits one FPI map per selected bin from the paired samples' Cayley-space
/// coefficients. `threads` <= 0 uses the hardware concurrency.
MfpiModel mfpi_fit(const FrequencySet& master, const FrequencySet& slave, const MfpiConfig& config,
                   MfpiDiagnostics* diagnostics = nullptr, int threads = 0);

struct MfpiResidualReport {
  Eigen::VectorXd imaginary_residual;  // per sample
  Eigen::VectorXi fallback_bins;       // per sample: bins passed through due to a pole hit
};

struct MfpiTransferResult {
  Eigen::MatrixXd spectra;
  MfpiResidualReport residual;
};

MfpiTransferResult mfpi_transfer(const MfpiModel& model, const Eigen::MatrixXd& slave_spectra);

/// Frequency-domain leg of mfpi_transfer, exposed for frequency-domain scoring.
FrequencySet mfpi_transfer_frequency(const MfpiModel& model, const FrequencySet& slave,
                                     Eigen::VectorXi* fallback_bins = nullptr);

void save_mfpi_model(const MfpiModel& model, const std::filesystem::path& path);
MfpiModel load_mfpi_model(const std::filesystem::path& path);

}  // namespace calxfer
