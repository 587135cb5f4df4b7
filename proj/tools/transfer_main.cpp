// transfer: run, compare and tune calibration-transfer experiments.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "calxfer/error.hpp"
#include "calxfer/experiment.hpp"

namespace {

std::pair<int, int> parse_range(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw CLI::ValidationError("--range", "expected MIN:MAX, got '" + text + "'");
  try {
    size_t used = 0;
    const int lo = std::stoi(text.substr(0, colon), &used);
    if (used != colon) throw std::invalid_argument(text);
    const std::string hi_text = text.substr(colon + 1);
    const int hi = std::stoi(hi_text, &used);
    if (used != hi_text.size()) throw std::invalid_argument(text);
    if (lo < 1 || hi < lo) throw std::invalid_argument(text);
    return {lo, hi};
  } catch (const std::logic_error&) {
    throw CLI::ValidationError("--range", "expected MIN:MAX with 1 <= MIN <= MAX, got '" + text + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibration transfer between spectrometers"};
  app.require_subcommand(1);

  std::string config_path;
  std::string domain;
  bool dump_frequency = false;
  std::string out_dir;
  auto* run = app.add_subcommand("run", "Fit and evaluate one transfer method");
  run->add_option("--config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--mrmset-domain", domain, "Also report MRMSET in this domain")
      ->check(CLI::IsMember({"wavelength", "frequency"}));
  run->add_flag("--dump-frequency", dump_frequency, "Write frequency-domain coefficients per split");
  run->add_option("--out", out_dir, "Output directory (overrides output_dir in the config)");

  std::vector<std::string> compare_paths;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "Run several configs and tabulate RMSEP");
  compare->add_option("--configs", compare_paths, "Experiment configs")->required()->expected(1, -1);
  compare->add_option("--out", compare_out, "Output directory")->required();

  std::string search_config;
  std::string range_text;
  std::string search_out;
  auto* search = app.add_subcommand("window-search", "Score PDS windows on the validation split");
  search->add_option("--config", search_config, "Experiment config (JSON)")->required();
  search->add_option("--range", range_text, "Window range MIN:MAX (odd windows are scored)")->required();
  search->add_option("--out", search_out, "Output directory (overrides output_dir in the config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      calxfer::RunOptions options;
      if (!domain.empty()) options.mrmset_domain = domain;
      options.dump_frequency = dump_frequency;
      if (!out_dir.empty()) options.output_dir = out_dir;
      const auto outcome = calxfer::run_experiment(calxfer::load_config(config_path), options);
      for (const auto& s : outcome.report.splits)
        std::cout << s.split << ": MRMSET " << s.mrmset << " (untransferred " << s.mrmset_untransferred << ")\n";
      std::cout << "report written to " << (outcome.output_dir / "report.json").string() << '\n';
    } else if (*compare) {
      std::vector<calxfer::ExperimentConfig> configs;
      for (const auto& p : compare_paths) configs.push_back(calxfer::load_config(p));
      const auto outcomes = calxfer::compare_methods(configs, compare_out);
      std::cout << outcomes.size() << " runs; table written to " << compare_out << "/table.csv\n";
    } else if (*search) {
      std::pair<int, int> range;
      try {
        range = parse_range(range_text);
      } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << '\n';
        return 2;
      }
      const auto config = calxfer::load_config(search_config);
      calxfer::fs::path out = search_out;
      if (out.empty()) {
        if (config.output_dir.empty()) throw calxfer::Error("cli", "no output directory (set output_dir or pass --out)");
        out = config.resolve(config.output_dir);
      }
      const auto result = calxfer::run_window_search(config, range.first, range.second, out);
      std::cout << "best window " << result.best_window << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
