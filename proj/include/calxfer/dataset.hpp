#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace calxfer {

/// Spectra of one instrument: N samples x M wavelengths plus optional
/// reference properties. Immutable once validated.
struct SpectralDataset {
  std::string instrument_id;
  std::vector<double> wavelengths;
  Eigen::MatrixXd absorbance;                // N x M
  std::vector<std::string> property_names;
  Eigen::MatrixXd properties;                // N x P, P = property_names.size()
  std::vector<std::string> sample_ids;

  int n_samples() const { return static_cast<int>(absorbance.rows()); }
  int n_wavelengths() const { return static_cast<int>(absorbance.cols()); }

  /// Throws calxfer::Error when an invariant is broken.
  void validate() const;

  Eigen::VectorXd property(const std::string& name) const;
  SpectralDataset subset(std::span<const int> indices) const;
};

struct DatasetSplit {
  std::vector<int> calibration;
  std::vector<int> validation;
  std::vector<int> test;

  void validate(int n_samples) const;
};

/// Reads the spectra CSV (header row of wavelengths, optional leading
/// `sample_id` column) and an optional properties CSV in the same row order.
SpectralDataset load_csv(const std::filesystem::path& spectra_path,
                         const std::optional<std::filesystem::path>& properties_path,
                         const std::string& instrument_id);

void write_csv(const SpectralDataset& dataset, const std::filesystem::path& spectra_path,
               const std::optional<std::filesystem::path>& properties_path);

/// Rows stacked in argument order; wavelengths and property names must agree.
SpectralDataset concatenate(std::span<const SpectralDataset> parts);

/// Max-min Euclidean selection seeded with the globally farthest pair.
/// Ties resolve to the lowest index.
std::vector<int> kennard_stone_select(const Eigen::MatrixXd& x, int k);
std::vector<int> kennard_stone_select(const SpectralDataset& dataset, int k);

std::vector<int> subsample_stride(std::span<const int> indices, int stride);

/// Returns the column-centred matrix and the column means.
std::pair<Eigen::MatrixXd, Eigen::RowVectorXd> mean_center(const Eigen::MatrixXd& x);

/// Whitespace separated integer list, used for explicit split files.
std::vector<int> read_index_file(const std::filesystem::path& path);

}  // namespace calxfer
