#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "calxfer/chemometrics.hpp"
#include "calxfer/dataset.hpp"
#include "calxfer/mfpi.hpp"
#include "calxfer/standardization.hpp"

namespace calxfer {

namespace fs = std::filesystem;

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr int kReportSchemaVersion = 1;

/// One instrument's data: either a single spectra file (split later) or one
/// file pair per split under "calibration" / "validation" / "test".
struct DatasetSource {
  struct Files {
    std::string spectra;
    std::optional<std::string> properties;
  };
  std::string instrument_id;
  std::optional<Files> all;
  std::map<std::string, Files> parts;
};

struct SplitConfig {
  /// "files", "indices", "kennard_stone" or "all".
  std::string method = "all";
  int k = 0;
  std::optional<std::string> calibration, validation, test;  // index files for "indices"
  /// Every stride-th calibration sample is used to fit the transfer.
  int fit_stride = 1;
};

struct MethodConfig {
  /// "ds", "pds", "mfpi", "mfpi-ds" or "mfpi-pds".
  std::string name;
  std::optional<int> window;
  std::optional<std::pair<int, int>> window_search;
  bool mean_correction = false;
  MfpiConfig mfpi;
};

struct EvaluationConfig {
  std::vector<std::string> properties;
  int k_max = 10;
  /// "loo" (calibration leave-one-out) or "validation" (master validation RMSEP).
  std::string k_selection = "loo";
  /// "wavelength" or "frequency"; wavelength-domain MRMSET is always reported.
  std::string mrmset_domain = "wavelength";
  double bland_altman_multiplier = 1.96;
};

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::string label;           // method label in tables; defaults to the method name
  std::string transfer_label;  // defaults to "<slave id>-><master id>"
  DatasetSource master;
  DatasetSource slave;
  SplitConfig split;
  MethodConfig method;
  EvaluationConfig evaluation;
  std::string output_dir;
  fs::path base_dir;                   // relative paths resolve against this
  std::optional<fs::path> source_path; // the config file, when loaded from disk

  fs::path resolve(const std::string& p) const;
  /// Checks completeness of method parameters and that every path exists.
  void validate() const;
  std::string method_label() const;
  std::string resolved_transfer_label() const;
};

ExperimentConfig parse_config(const std::string& json_text, const fs::path& base_dir);
ExperimentConfig load_config(const fs::path& path);
/// Canonical JSON of the config with every default filled in.
std::string config_to_json(const ExperimentConfig& config);

struct RunOptions {
  std::optional<std::string> mrmset_domain;
  bool dump_frequency = false;
  std::optional<fs::path> output_dir;
};

/// Loaded and split data for one experiment.
struct ExperimentData {
  SpectralDataset master;
  SpectralDataset slave;
  DatasetSplit split;
  std::map<std::string, std::string> input_hashes;  // config-relative path -> sha256
  std::vector<std::string> notes;
};

ExperimentData load_experiment_data(const ExperimentConfig& config);

struct ExperimentOutcome {
  TransferReport report;
  TransferModel model;
  std::optional<WindowSearchResult> window_search;
  fs::path output_dir;
  std::map<std::string, std::string> input_hashes;
  DatasetSplit split;
};

/// Fits on the calibration pair, transfers every split, evaluates and writes
/// report.json plus the plot-data CSVs. On failure a FAILED marker holding
/// the error is left in the output directory and the exception rethrown.
ExperimentOutcome run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// Runs each config into its own subdirectory of `output_dir` and writes the
/// combined table.csv / table_wide.csv. Configs sharing a transfer label must
/// share datasets and splits.
std::vector<ExperimentOutcome> compare_methods(const std::vector<ExperimentConfig>& configs,
                                               const fs::path& output_dir, const RunOptions& options = {});

WindowSearchResult run_window_search(const ExperimentConfig& config, int min_window, int max_window,
                                     const fs::path& output_dir);

std::string sha256_file(const fs::path& path);

}  // namespace calxfer
