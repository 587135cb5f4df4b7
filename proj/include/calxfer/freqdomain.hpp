#pragma once

#include <complex>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace calxfer {

using cplx = std::complex<double>;

/// Non-negative-frequency half of the unnormalized DFT of each spectrum.
/// Bin b of sample n is coefficients(n, b); the negative half is implied
/// by conjugate symmetry.
struct FrequencySet {
  int n_wavelengths = 0;
  Eigen::MatrixXcd coefficients;  // N x (M/2 + 1)
  std::vector<std::string> sample_ids;

  int n_samples() const { return static_cast<int>(coefficients.rows()); }
  int n_bins() const { return static_cast<int>(coefficients.cols()); }
};

inline int bins_for(int n_wavelengths) { return n_wavelengths / 2 + 1; }

FrequencySet to_frequency(const Eigen::MatrixXd& spectra, std::vector<std::string> sample_ids = {});

struct WavelengthResult {
  Eigen::MatrixXd spectra;
  /// Largest |imaginary part| dropped from each reconstructed row.
  Eigen::VectorXd imaginary_residual;
};

/// Mirrors conjugates into the negative half, inverts with 1/M scaling and
/// keeps the real part.
WavelengthResult to_wavelength(const FrequencySet& freq);

/// (z - i) / (z + i). Throws SingularityError within 1e-12 of -i.
cplx cayley(cplx z);
/// i (1 + w) / (1 - w). Throws SingularityError within 1e-12 of 1.
cplx inverse_cayley(cplx w);

inline constexpr double kCayleyTolerance = 1e-12;

/// CSV of (bin, sample_id, re, im), one line per coefficient.
void write_frequency_csv(const FrequencySet& freq, const std::filesystem::path& path);

}  // namespace calxfer
