#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <numeric>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "calxfer/error.hpp"
#include "calxfer/experiment.hpp"
#include "planted.hpp"
#include "test_support.hpp"

using namespace calxfer;
using test_support::TempDir;
using json = nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

// Writes master/slave spectra and a property file with a linear property.
void write_pair(const TempDir& dir, const Eigen::MatrixXd& master, const Eigen::MatrixXd& slave) {
  SpectralDataset m;
  for (int c = 0; c < master.cols(); ++c) m.wavelengths.push_back(1100.0 + 2.0 * c);
  m.absorbance = master;
  for (int r = 0; r < master.rows(); ++r) m.sample_ids.push_back("s" + std::to_string(r));
  m.property_names = {"moisture"};
  m.properties = master * Eigen::VectorXd::LinSpaced(master.cols(), -1.0, 1.0);
  SpectralDataset s = m;
  s.absorbance = slave;
  write_csv(m, dir / "master.csv", dir / "props.csv");
  write_csv(s, dir / "slave.csv", std::nullopt);
}

json base_config(const std::string& method) {
  json j = json::parse(R"({
    "schema_version": 1,
    "master": {"instrument_id": "A", "spectra": "master.csv", "properties": "props.csv"},
    "slave": {"instrument_id": "B", "spectra": "slave.csv"},
    "split": {"method": "kennard_stone", "k": 12},
    "evaluation": {"properties": ["moisture"], "k_max": 4},
    "output_dir": "out"
  })");
  j["method"] = {{"name", method}};
  return j;
}

ExperimentConfig config_in(const TempDir& dir, const json& j, const std::string& name = "config.json") {
  write_text(dir / name, j.dump(2));
  return load_config(dir / name);
}

}  // namespace

TEST_SUITE("experiment") {
  TEST_CASE("config parsing fills defaults and round-trips through JSON") {
    TempDir dir("exp");
    write_pair(dir, planted::smooth_spectra(20, 16, 1), planted::smooth_spectra(20, 16, 1));
    json j = base_config("mfpi-pds");
    j["method"]["window"] = 5;
    j["method"]["mfpi"] = {{"tolerance", 1e-8}, {"bins", {{0, 3}, {5, 8}}}, {"reject", {"s1"}}};
    const ExperimentConfig cfg = config_in(dir, j);
    CHECK(cfg.method.name == "mfpi-pds");
    CHECK(cfg.method.window == 5);
    CHECK(cfg.method.mfpi.tolerance == 1e-8);
    CHECK(cfg.method.mfpi.max_iter == 100);
    REQUIRE(cfg.method.mfpi.bins.has_value());
    CHECK(cfg.method.mfpi.bins->size() == 2);
    CHECK(cfg.evaluation.k_selection == "loo");
    CHECK(cfg.evaluation.mrmset_domain == "wavelength");
    CHECK(cfg.evaluation.bland_altman_multiplier == 1.96);
    CHECK(cfg.method_label() == "mfpi-pds");
    CHECK(cfg.resolved_transfer_label() == "B->A");
    CHECK_NOTHROW(cfg.validate());

    const ExperimentConfig again = parse_config(config_to_json(cfg), cfg.base_dir);
    CHECK(config_to_json(again) == config_to_json(cfg));
  }

  TEST_CASE("config errors") {
    TempDir dir("exp");
    write_pair(dir, planted::smooth_spectra(20, 16, 1), planted::smooth_spectra(20, 16, 1));
    auto invalid = [&](json j) { CHECK_THROWS_AS(config_in(dir, j).validate(), Error); };
    CHECK_THROWS_AS(parse_config("{not json", dir.path()), Error);
    json j = base_config("ds");
    j["schema_version"] = 2;
    invalid(j);
    invalid(base_config("pls"));
    invalid(base_config("pds"));  // needs window or search
    j = base_config("ds");
    j["master"]["spectra"] = "missing.csv";
    invalid(j);
    j = base_config("ds");
    j["split"] = {{"method", "kennard_stone"}, {"k", 1}};
    invalid(j);
    j = base_config("ds");
    j["evaluation"]["k_selection"] = "magic";
    invalid(j);
    j = base_config("mfpi");
    j["method"]["mfpi"] = {{"max_iter", 0}};
    invalid(j);
    CHECK_THROWS_AS(load_config(dir / "nope.json"), Error);
  }

  TEST_CASE("self transfer with DS: zero error, outputs written, failure marker absent") {
    TempDir dir("exp");
    const Eigen::MatrixXd x = planted::smooth_spectra(24, 16, 2);
    write_pair(dir, x, x);
    const ExperimentConfig cfg = config_in(dir, base_config("ds"));
    const ExperimentOutcome out = run_experiment(cfg);
    REQUIRE(out.report.splits.size() == 2);
    for (const auto& s : out.report.splits) CHECK(s.mrmset < 1e-8);
    for (const char* f : {"report.json", "table.csv", "diff_spectra.csv", "bland_altman.csv", "loo_curves.csv", "ds.model"})
      CHECK(fs::exists(dir / ("out/" + std::string(f))));
    CHECK(!fs::exists(dir / "out/FAILED"));

    const json report = json::parse(slurp(dir / "out/report.json"));
    CHECK(report["report_schema_version"] == 1);
    CHECK(report["model"] == "ds");
    CHECK(report["split_sizes"]["calibration"] == 12);
    CHECK(report["split_sizes"]["test"] == 12);
    CHECK(report["provenance"]["input_sha256"]["master.csv"] == sha256_file(dir / "master.csv"));
    CHECK(report["provenance"]["config"]["method"]["name"] == "ds");
    const auto& entry = report["properties"][0]["rmsep"][0];
    CHECK(entry["split"] == "test");
    CHECK(std::abs(entry["transferred"].get<double>() - entry["master"].get<double>()) < 1e-8);
  }

  TEST_CASE("reports are byte identical across runs") {
    TempDir dir("exp");
    const Eigen::MatrixXd m = planted::smooth_spectra(24, 32, 3);
    write_pair(dir, m, planted::moebius_distort(m));
    json j = base_config("mfpi-ds");
    const ExperimentConfig cfg = config_in(dir, j);
    RunOptions a, b;
    a.output_dir = dir / "run_a";
    b.output_dir = dir / "run_b";
    a.mrmset_domain = b.mrmset_domain = "frequency";
    run_experiment(cfg, a);
    run_experiment(cfg, b);
    for (const char* f : {"report.json", "table.csv", "diff_spectra.csv", "mfpi.model", "ds.model"})
      CHECK(slurp(dir / ("run_a/" + std::string(f))) == slurp(dir / ("run_b/" + std::string(f))));
    const json report = json::parse(slurp(dir / "run_a/report.json"));
    CHECK(report["model"] == "mfpi-ds");
    CHECK(report["splits"][0].contains("mrmset_frequency"));
  }

  TEST_CASE("even window is made odd and noted; window search writes its curve") {
    TempDir dir("exp");
    const Eigen::MatrixXd m = planted::smooth_spectra(30, 20, 4);
    write_pair(dir, m, 1.1 * m);
    json j = base_config("pds");
    j["method"]["window"] = 6;
    ExperimentOutcome out = run_experiment(config_in(dir, j));
    bool noted = false;
    for (const auto& n : out.report.notes) noted = noted || n.find("even") != std::string::npos;
    CHECK(noted);
    const PdsModel pds = load_pds_model(dir / "out/pds.model");
    CHECK(pds.window == 5);

    write_text(dir / "cal.txt", "0 1 2 3 4 5 6 7 8 9 10 11 12 13 14 15 16 17 18 19\n");
    write_text(dir / "val.txt", "20 21 22 23 24\n");
    write_text(dir / "test.txt", "25 26 27 28 29\n");
    j = base_config("pds");
    j["split"] = {{"method", "indices"}, {"calibration", "cal.txt"}, {"validation", "val.txt"}, {"test", "test.txt"}};
    j["method"]["window_search"] = {3, 11};
    out = run_experiment(config_in(dir, j));
    REQUIRE(out.window_search.has_value());
    CHECK(fs::exists(dir / "out/window_search.csv"));
    CHECK(out.report.properties[0].rmsep.size() == 2);

    const WindowSearchResult r = run_window_search(config_in(dir, j), 3, 9, dir / "ws");
    CHECK(r.scores.size() == 4);
    CHECK(fs::exists(dir / "ws/window_search.csv"));
  }

  TEST_CASE("per-split files and validation-based k selection") {
    TempDir dir("exp");
    const Eigen::MatrixXd m = planted::smooth_spectra(30, 16, 5);
    write_pair(dir, m, m);
    const SpectralDataset master = load_csv(dir / "master.csv", dir / "props.csv", "A");
    const SpectralDataset slave = load_csv(dir / "slave.csv", std::nullopt, "B");
    std::vector<int> cal(20), val(10);
    std::iota(cal.begin(), cal.end(), 0);
    std::iota(val.begin(), val.end(), 20);
    write_csv(master.subset(cal), dir / "m_cal.csv", dir / "p_cal.csv");
    write_csv(master.subset(val), dir / "m_val.csv", dir / "p_val.csv");
    write_csv(slave.subset(cal), dir / "s_cal.csv", std::nullopt);
    write_csv(slave.subset(val), dir / "s_val.csv", std::nullopt);
    json j = base_config("ds");
    j["master"] = {{"instrument_id", "A"},
                   {"calibration", {{"spectra", "m_cal.csv"}, {"properties", "p_cal.csv"}}},
                   {"validation", {{"spectra", "m_val.csv"}, {"properties", "p_val.csv"}}}};
    j["slave"] = {{"instrument_id", "B"},
                  {"calibration", {{"spectra", "s_cal.csv"}}},
                  {"validation", {{"spectra", "s_val.csv"}}}};
    j.erase("split");
    j["evaluation"]["k_selection"] = "validation";
    const ExperimentConfig cfg = config_in(dir, j);
    CHECK(cfg.split.method == "files");
    const ExperimentOutcome out = run_experiment(cfg);
    CHECK(out.split.calibration.size() == 20);
    CHECK(out.split.validation.size() == 10);
    CHECK(out.report.properties[0].rmsep[0].split == "validation");
  }

  TEST_CASE("failures leave a marker and surface the module") {
    TempDir dir("exp");
    const Eigen::MatrixXd m = planted::smooth_spectra(10, 16, 6);
    write_pair(dir, m, m);
    write_text(dir / "slave.csv", slurp(dir / "slave.csv") + "s10,1,2\n");  // ragged row
    try {
      run_experiment(config_in(dir, base_config("ds")));
      FAIL("expected an error");
    } catch (const LoadError& e) {
      CHECK(e.module() == "dataset");
    }
    CHECK(fs::exists(dir / "out/FAILED"));
    CHECK(slurp(dir / "out/FAILED").find("ragged") != std::string::npos);
  }

  TEST_CASE("compare marks the best method and ties") {
    TempDir dir("exp");
    const Eigen::MatrixXd x = planted::smooth_spectra(24, 16, 7);
    write_pair(dir, x, x);
    json ds = base_config("ds");
    json pds = base_config("pds");
    pds["method"]["window"] = 5;
    const std::vector<ExperimentConfig> configs{config_in(dir, ds, "a.json"), config_in(dir, ds, "b.json"),
                                                config_in(dir, pds, "c.json")};
    const auto outcomes = compare_methods(configs, dir / "cmp");
    CHECK(outcomes.size() == 3);
    const std::string table = slurp(dir / "cmp/table.csv");
    std::istringstream lines(table);
    std::string line;
    std::getline(lines, line);
    CHECK(line == "transfer,method,property,split,rmsep,best,failed_transfer");
    int ds_rows = 0, ds_best = 0, best = 0, baseline = 0;
    std::vector<std::string> ds_values;
    while (std::getline(lines, line)) {
      std::vector<std::string> cells;
      std::istringstream cs(line);
      for (std::string cell; std::getline(cs, cell, ',');) cells.push_back(cell);
      REQUIRE(cells.size() == 7);
      if (cells[1] == "ds") {
        ++ds_rows;
        ds_values.push_back(cells[4]);
        ds_best += cells[5] == "1";
      }
      best += cells[5] == "1";
      baseline += cells[1] == "Master";
      if (cells[1] == "Master" || cells[1] == "Slave") CHECK(cells[5] == "0");
    }
    CHECK(ds_rows == 2);
    CHECK(ds_values[0] == ds_values[1]);
    CHECK((ds_best == 0 || ds_best == 2));  // identical configs tie
    CHECK(best >= 1);
    CHECK(baseline == 1);
    CHECK(fs::exists(dir / "cmp/table_wide.csv"));

    json other = base_config("ds");
    other["split"]["k"] = 10;
    const std::vector<ExperimentConfig> mismatched{config_in(dir, ds, "a.json"), config_in(dir, other, "d.json")};
    CHECK_THROWS_AS(compare_methods(mismatched, dir / "cmp2"), Error);
    CHECK(fs::exists(dir / "cmp2/FAILED"));
  }

  TEST_CASE("sha256 of a known string") {
    TempDir dir("exp");
    write_text(dir / "abc.txt", "abc");
    CHECK(sha256_file(dir / "abc.txt") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }

#ifdef CALXFER_TRANSFER_EXE
  TEST_CASE("transfer executable exit codes") {
    TempDir dir("exp");
    const Eigen::MatrixXd x = planted::smooth_spectra(24, 16, 8);
    write_pair(dir, x, x);
    config_in(dir, base_config("ds"));
    const std::string exe = CALXFER_TRANSFER_EXE;
    const std::string quiet = " > " + (dir / "log.txt").string() + " 2>&1";
    auto run = [&](const std::string& args) {
      const int status = std::system((exe + " " + args + quiet).c_str());
      return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    };
    CHECK(run("run --config " + (dir / "config.json").string() + " --out " + (dir / "cli").string()) == 0);
    CHECK(fs::exists(dir / "cli/report.json"));
    CHECK(run("run --config " + (dir / "config.json").string() + " --mrmset-domain frequency --dump-frequency --out " +
              (dir / "cli2").string()) == 0);
    CHECK(fs::exists(dir / "cli2/frequency_test_transferred.csv"));
    CHECK(run("run") == 2);
    CHECK(run("run --config " + (dir / "config.json").string() + " --mrmset-domain other") == 2);
    CHECK(run("window-search --config " + (dir / "config.json").string() + " --range 9:3") == 2);
    CHECK(run("run --config " + (dir / "missing.json").string()) == 1);
    CHECK(run("compare --configs " + (dir / "config.json").string() + " " + (dir / "config.json").string() +
              " --out " + (dir / "cmp").string()) == 0);
    CHECK(fs::exists(dir / "cmp/table.csv"));
  }
#endif
}
