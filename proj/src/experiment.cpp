#include "calxfer/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "calxfer/error.hpp"
#include "calxfer/textio.hpp"

namespace calxfer {

using json = nlohmann::ordered_json;

namespace {

const std::array<const char*, 3> kSplitNames{"calibration", "validation", "test"};
const std::set<std::string> kMethods{"ds", "pds", "mfpi", "mfpi-ds", "mfpi-pds"};

// ---------------------------------------------------------------------------
// Config parsing.

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) && !j.at(key).is_null() ? j.at(key).get<T>() : fallback;
}

std::optional<std::string> get_opt_string(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

DatasetSource::Files parse_files(const json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("spectra")) throw Error("config", where + ": missing 'spectra'");
  return {j.at("spectra").get<std::string>(), get_opt_string(j, "properties")};
}

DatasetSource parse_source(const json& j, const std::string& where) {
  if (!j.is_object()) throw Error("config", "'" + where + "' must be an object");
  DatasetSource src;
  src.instrument_id = get_or<std::string>(j, "instrument_id", where);
  if (j.contains("spectra")) src.all = parse_files(j, where);
  for (const char* split : kSplitNames)
    if (j.contains(split)) src.parts[split] = parse_files(j.at(split), where + "." + split);
  if (src.all && !src.parts.empty())
    throw Error("config", where + ": give either 'spectra' or per-split files, not both");
  if (!src.all && src.parts.empty()) throw Error("config", where + ": no spectra files");
  return src;
}

json files_to_json(const DatasetSource::Files& f) {
  json j;
  j["spectra"] = f.spectra;
  j["properties"] = f.properties ? json(*f.properties) : json(nullptr);
  return j;
}

json source_to_json(const DatasetSource& src) {
  json j;
  j["instrument_id"] = src.instrument_id;
  if (src.all) {
    j["spectra"] = src.all->spectra;
    j["properties"] = src.all->properties ? json(*src.all->properties) : json(nullptr);
  }
  for (const char* split : kSplitNames) {
    auto it = src.parts.find(split);
    if (it != src.parts.end()) j[split] = files_to_json(it->second);
  }
  return j;
}

// ---------------------------------------------------------------------------

std::string hex(const unsigned char* data, unsigned len) {
  std::ostringstream ss;
  for (unsigned i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(data[i]);
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cli", "cannot write " + path.string());
  out << text;
}

std::string fmt(double v) { return textio::format_double17(v); }

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cli", "cannot hash " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &len);
  return hex(digest.data(), len);
}

fs::path ExperimentConfig::resolve(const std::string& p) const {
  fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

std::string ExperimentConfig::method_label() const { return label.empty() ? method.name : label; }

std::string ExperimentConfig::resolved_transfer_label() const {
  return transfer_label.empty() ? slave.instrument_id + "->" + master.instrument_id : transfer_label;
}

void ExperimentConfig::validate() const {
  if (schema_version != kConfigSchemaVersion)
    throw Error("config", "unsupported schema_version " + std::to_string(schema_version));
  if (!kMethods.count(method.name))
    throw Error("config", "unknown method '" + method.name + "' (expected ds, pds, mfpi, mfpi-ds or mfpi-pds)");
  const bool uses_pds = method.name == "pds" || method.name == "mfpi-pds";
  if (uses_pds && !method.window && !method.window_search)
    throw Error("config", "method '" + method.name + "' needs 'window' or 'window_search'");
  if (method.window_search && method.window_search->first > method.window_search->second)
    throw Error("config", "window_search range is empty");
  if (method.name.rfind("mfpi", 0) == 0) {
    if (!(method.mfpi.tolerance > 0.0)) throw Error("config", "mfpi.tolerance must be > 0");
    if (method.mfpi.max_iter < 1) throw Error("config", "mfpi.max_iter must be >= 1");
  }
  static const std::set<std::string> split_methods{"files", "indices", "kennard_stone", "all"};
  if (!split_methods.count(split.method)) throw Error("config", "unknown split method '" + split.method + "'");
  if (split.method == "kennard_stone" && split.k < 2) throw Error("config", "split.k must be >= 2");
  if (split.method == "indices" && !split.calibration)
    throw Error("config", "split method 'indices' needs a calibration index file");
  if (split.fit_stride < 1) throw Error("config", "split.fit_stride must be >= 1");
  if (split.method == "files" && (master.parts.empty() || slave.parts.empty()))
    throw Error("config", "split method 'files' needs per-split files for master and slave");
  if (split.method != "files" && (!master.all || !slave.all))
    throw Error("config", "split method '" + split.method + "' needs a single spectra file per instrument");
  if (evaluation.k_max < 1) throw Error("config", "evaluation.k_max must be >= 1");
  if (evaluation.k_selection != "loo" && evaluation.k_selection != "validation")
    throw Error("config", "evaluation.k_selection must be 'loo' or 'validation'");
  if (evaluation.mrmset_domain != "wavelength" && evaluation.mrmset_domain != "frequency")
    throw Error("config", "evaluation.mrmset_domain must be 'wavelength' or 'frequency'");

  auto check = [&](const std::string& p) {
    if (!fs::exists(resolve(p))) throw Error("config", "input file not found: " + resolve(p).string());
  };
  for (const auto* src : {&master, &slave}) {
    if (src->all) {
      check(src->all->spectra);
      if (src->all->properties) check(*src->all->properties);
    }
    for (const auto& [name, files] : src->parts) {
      check(files.spectra);
      if (files.properties) check(*files.properties);
    }
  }
  for (const auto& f : {split.calibration, split.validation, split.test})
    if (f) check(*f);
}

ExperimentConfig parse_config(const std::string& json_text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    throw Error("config", std::string("invalid JSON: ") + e.what());
  }
  try {
    ExperimentConfig cfg;
    cfg.base_dir = base_dir;
    cfg.schema_version = get_or<int>(j, "schema_version", 0);
    if (cfg.schema_version != kConfigSchemaVersion)
      throw Error("config", "schema_version must be " + std::to_string(kConfigSchemaVersion));
    cfg.label = get_or<std::string>(j, "label", "");
    cfg.transfer_label = get_or<std::string>(j, "transfer_label", "");
    if (!j.contains("master") || !j.contains("slave")) throw Error("config", "'master' and 'slave' are required");
    cfg.master = parse_source(j.at("master"), "master");
    cfg.slave = parse_source(j.at("slave"), "slave");

    if (j.contains("split")) {
      const json& s = j.at("split");
      cfg.split.method = get_or<std::string>(s, "method", cfg.master.parts.empty() ? "all" : "files");
      cfg.split.k = get_or<int>(s, "k", 0);
      cfg.split.calibration = get_opt_string(s, "calibration");
      cfg.split.validation = get_opt_string(s, "validation");
      cfg.split.test = get_opt_string(s, "test");
      cfg.split.fit_stride = get_or<int>(s, "fit_stride", 1);
    } else {
      cfg.split.method = cfg.master.parts.empty() ? "all" : "files";
    }

    if (!j.contains("method")) throw Error("config", "'method' is required");
    const json& m = j.at("method");
    if (m.is_string()) {
      cfg.method.name = m.get<std::string>();
    } else {
      cfg.method.name = m.at("name").get<std::string>();
      if (m.contains("window") && !m.at("window").is_null()) cfg.method.window = m.at("window").get<int>();
      if (m.contains("window_search") && !m.at("window_search").is_null()) {
        const auto range = m.at("window_search").get<std::vector<int>>();
        if (range.size() != 2) throw Error("config", "window_search must be [min, max]");
        cfg.method.window_search = std::make_pair(range[0], range[1]);
      }
      cfg.method.mean_correction = get_or<bool>(m, "mean_correction", false);
      if (m.contains("mfpi")) {
        const json& f = m.at("mfpi");
        cfg.method.mfpi.tolerance = get_or<double>(f, "tolerance", cfg.method.mfpi.tolerance);
        cfg.method.mfpi.max_iter = get_or<int>(f, "max_iter", cfg.method.mfpi.max_iter);
        cfg.method.mfpi.reject = get_or<std::vector<std::string>>(f, "reject", {});
        if (f.contains("bins") && !f.at("bins").is_null()) {
          std::vector<BinRange> ranges;
          for (const auto& r : f.at("bins")) {
            const auto pair = r.get<std::vector<int>>();
            if (pair.size() != 2) throw Error("config", "mfpi.bins entries must be [first, last]");
            ranges.push_back({pair[0], pair[1]});
          }
          cfg.method.mfpi.bins = std::move(ranges);
        }
      }
    }

    if (j.contains("evaluation")) {
      const json& e = j.at("evaluation");
      cfg.evaluation.properties = get_or<std::vector<std::string>>(e, "properties", {});
      cfg.evaluation.k_max = get_or<int>(e, "k_max", cfg.evaluation.k_max);
      cfg.evaluation.k_selection = get_or<std::string>(e, "k_selection", cfg.evaluation.k_selection);
      cfg.evaluation.mrmset_domain = get_or<std::string>(e, "mrmset_domain", cfg.evaluation.mrmset_domain);
      cfg.evaluation.bland_altman_multiplier =
          get_or<double>(e, "bland_altman_multiplier", cfg.evaluation.bland_altman_multiplier);
    }
    cfg.output_dir = get_or<std::string>(j, "output_dir", "");
    return cfg;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error("config", std::string("malformed config: ") + e.what());
  }
}

ExperimentConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw Error("config", "config file not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  ExperimentConfig cfg = parse_config(ss.str(), fs::absolute(path).parent_path());
  cfg.source_path = path;
  return cfg;
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["schema_version"] = c.schema_version;
  j["label"] = c.method_label();
  j["transfer_label"] = c.resolved_transfer_label();
  j["master"] = source_to_json(c.master);
  j["slave"] = source_to_json(c.slave);
  json s;
  s["method"] = c.split.method;
  s["k"] = c.split.k;
  s["calibration"] = c.split.calibration ? json(*c.split.calibration) : json(nullptr);
  s["validation"] = c.split.validation ? json(*c.split.validation) : json(nullptr);
  s["test"] = c.split.test ? json(*c.split.test) : json(nullptr);
  s["fit_stride"] = c.split.fit_stride;
  j["split"] = s;
  json m;
  m["name"] = c.method.name;
  m["window"] = c.method.window ? json(*c.method.window) : json(nullptr);
  m["window_search"] = c.method.window_search
                           ? json::array({c.method.window_search->first, c.method.window_search->second})
                           : json(nullptr);
  m["mean_correction"] = c.method.mean_correction;
  json f;
  f["tolerance"] = c.method.mfpi.tolerance;
  f["max_iter"] = c.method.mfpi.max_iter;
  f["reject"] = c.method.mfpi.reject;
  if (c.method.mfpi.bins) {
    json ranges = json::array();
    for (const auto& r : *c.method.mfpi.bins) ranges.push_back({r.first, r.last});
    f["bins"] = ranges;
  } else {
    f["bins"] = nullptr;
  }
  m["mfpi"] = f;
  j["method"] = m;
  json e;
  e["properties"] = c.evaluation.properties;
  e["k_max"] = c.evaluation.k_max;
  e["k_selection"] = c.evaluation.k_selection;
  e["mrmset_domain"] = c.evaluation.mrmset_domain;
  e["bland_altman_multiplier"] = c.evaluation.bland_altman_multiplier;
  j["evaluation"] = e;
  j["output_dir"] = c.output_dir;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Data loading.

namespace {

struct LoadedSource {
  SpectralDataset data;
  std::map<std::string, int> part_sizes;
};

LoadedSource load_source(const ExperimentConfig& cfg, const DatasetSource& src,
                         std::map<std::string, std::string>& hashes) {
  auto load = [&](const DatasetSource::Files& f) {
    hashes[f.spectra] = sha256_file(cfg.resolve(f.spectra));
    std::optional<fs::path> props;
    if (f.properties) {
      props = cfg.resolve(*f.properties);
      hashes[*f.properties] = sha256_file(*props);
    }
    return load_csv(cfg.resolve(f.spectra), props, src.instrument_id);
  };
  LoadedSource out;
  if (src.all) {
    out.data = load(*src.all);
    return out;
  }
  std::vector<SpectralDataset> parts;
  for (const char* split : kSplitNames) {
    auto it = src.parts.find(split);
    if (it == src.parts.end()) continue;
    parts.push_back(load(it->second));
    out.part_sizes[split] = parts.back().n_samples();
  }
  out.data = concatenate(parts);
  return out;
}

}  // namespace

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentData d;
  LoadedSource master = load_source(cfg, cfg.master, d.input_hashes);
  LoadedSource slave = load_source(cfg, cfg.slave, d.input_hashes);
  if (master.data.n_samples() != slave.data.n_samples())
    throw Error("cli", "master has " + std::to_string(master.data.n_samples()) + " samples but slave has " +
                           std::to_string(slave.data.n_samples()) + "; samples must be paired");
  if (master.data.n_wavelengths() != slave.data.n_wavelengths())
    throw Error("cli", "master and slave spectra have different widths");
  if (master.data.wavelengths != slave.data.wavelengths)
    d.notes.push_back("master and slave wavelength axes differ; columns are paired by position");

  const int n = master.data.n_samples();
  if (cfg.split.method == "files") {
    if (master.part_sizes != slave.part_sizes)
      throw Error("cli", "master and slave per-split files hold different sample counts");
    int at = 0;
    for (const char* split : kSplitNames) {
      auto it = master.part_sizes.find(split);
      if (it == master.part_sizes.end()) continue;
      std::vector<int>& target = std::string(split) == "calibration" ? d.split.calibration
                                 : std::string(split) == "validation" ? d.split.validation
                                                                      : d.split.test;
      for (int i = 0; i < it->second; ++i) target.push_back(at++);
    }
  } else if (cfg.split.method == "indices") {
    auto read = [&](const std::optional<std::string>& f) {
      if (!f) return std::vector<int>{};
      d.input_hashes[*f] = sha256_file(cfg.resolve(*f));
      return read_index_file(cfg.resolve(*f));
    };
    d.split.calibration = read(cfg.split.calibration);
    d.split.validation = read(cfg.split.validation);
    d.split.test = read(cfg.split.test);
  } else if (cfg.split.method == "kennard_stone") {
    d.split.calibration = kennard_stone_select(master.data, cfg.split.k);
    std::vector<char> used(static_cast<size_t>(n), 0);
    for (int i : d.split.calibration) used[static_cast<size_t>(i)] = 1;
    for (int i = 0; i < n; ++i)
      if (!used[static_cast<size_t>(i)]) d.split.test.push_back(i);
  } else {
    d.split.calibration.resize(static_cast<size_t>(n));
    std::iota(d.split.calibration.begin(), d.split.calibration.end(), 0);
  }
  d.split.validate(n);
  d.master = std::move(master.data);
  d.slave = std::move(slave.data);
  return d;
}

// ---------------------------------------------------------------------------
// Experiment run.

namespace {

struct FitResult {
  TransferModel model;
  std::optional<WindowSearchResult> window_search;
  std::vector<std::string> notes;
};

int odd_window(int requested, std::vector<std::string>& notes) {
  if (requested % 2 == 0) {
    notes.push_back("PDS window " + std::to_string(requested) + " is even; using " + std::to_string(requested - 1) +
                    " so the window centres on its target wavelength");
    return requested - 1;
  }
  return requested;
}

PdsModel fit_pds_stage(const ExperimentConfig& cfg, const Eigen::MatrixXd& master_cal, const Eigen::MatrixXd& slave_cal,
                       const Eigen::MatrixXd& master_val, const Eigen::MatrixXd& slave_val,
                       const std::string& input_space, FitResult& fit) {
  int window = 0;
  if (cfg.method.window_search) {
    if (master_val.rows() == 0) throw Error("cli", "PDS window search needs a validation split");
    fit.window_search = pds_window_search(master_cal, slave_cal, master_val, slave_val,
                                          cfg.method.window_search->first, cfg.method.window_search->second,
                                          cfg.method.mean_correction);
    window = fit.window_search->best_window;
    fit.notes.push_back("PDS window " + std::to_string(window) + " chosen by validation MRMSET search over [" +
                        std::to_string(cfg.method.window_search->first) + ", " +
                        std::to_string(cfg.method.window_search->second) + "]");
  } else {
    window = odd_window(*cfg.method.window, fit.notes);
  }
  return pds_fit(master_cal, slave_cal, window, cfg.method.mean_correction, input_space);
}

FitResult fit_transfer(const ExperimentConfig& cfg, const ExperimentData& data, const std::vector<int>& fit_rows) {
  FitResult fit;
  const SpectralDataset master_fit = data.master.subset(fit_rows);
  const SpectralDataset slave_fit = data.slave.subset(fit_rows);
  const Eigen::MatrixXd master_val = data.master.subset(data.split.validation).absorbance;
  Eigen::MatrixXd slave_val = data.slave.subset(data.split.validation).absorbance;
  const std::string& name = cfg.method.name;

  Eigen::MatrixXd slave_cal = slave_fit.absorbance;
  std::string space = "slave";
  if (name.rfind("mfpi", 0) == 0) {
    MfpiModel mfpi = mfpi_fit(to_frequency(master_fit.absorbance, master_fit.sample_ids),
                              to_frequency(slave_fit.absorbance, slave_fit.sample_ids), cfg.method.mfpi);
    if (mfpi.degenerate_bins > 0)
      fit.notes.push_back(std::to_string(mfpi.degenerate_bins) + " MFPI bins passed through (degenerate quads)");
    fit.model = TransferModel(mfpi);
    space = mfpi.provenance.output;
    if (name != "mfpi") {
      slave_cal = fit.model.apply(slave_cal);
      if (slave_val.rows() > 0) slave_val = fit.model.apply(slave_val);
    }
  }
  if (name == "ds" || name == "mfpi-ds") {
    DsModel ds = ds_fit(master_fit.absorbance, slave_cal, cfg.method.mean_correction, space);
    fit.model = compose_transfer(fit.model, TransferModel(std::move(ds)));
  } else if (name == "pds" || name == "mfpi-pds") {
    PdsModel pds = fit_pds_stage(cfg, master_fit.absorbance, slave_cal, master_val, slave_val, space, fit);
    fit.model = compose_transfer(fit.model, TransferModel(std::move(pds)));
  }
  return fit;
}

void save_models(const TransferModel& model, const fs::path& dir) {
  for (const auto& stage : model.stages()) {
    if (const auto* ds = std::get_if<DsModel>(&stage)) save_ds_model(*ds, dir / "ds.model");
    if (const auto* pds = std::get_if<PdsModel>(&stage)) save_pds_model(*pds, dir / "pds.model");
    if (const auto* mfpi = std::get_if<MfpiModel>(&stage)) save_mfpi_model(*mfpi, dir / "mfpi.model");
  }
}

std::vector<int> split_indices(const DatasetSplit& s, const std::string& name) {
  if (name == "calibration") return s.calibration;
  if (name == "validation") return s.validation;
  return s.test;
}

json bland_altman_json(const BlandAltman& ba) {
  json j;
  j["bias"] = number_or_null(ba.bias);
  j["lower"] = number_or_null(ba.lower);
  j["upper"] = number_or_null(ba.upper);
  return j;
}

json report_json(const ExperimentConfig& cfg, const ExperimentOutcome& out, const RunOptions& options) {
  const TransferReport& r = out.report;
  json j;
  j["report_schema_version"] = kReportSchemaVersion;
  j["method"] = r.method;
  j["transfer"] = r.transfer;
  j["model"] = out.model.label();
  json sizes;
  sizes["calibration"] = out.split.calibration.size();
  sizes["validation"] = out.split.validation.size();
  sizes["test"] = out.split.test.size();
  j["split_sizes"] = sizes;
  j["calibration_indices"] = out.split.calibration;
  json splits = json::array();
  for (const auto& s : r.splits) {
    json sj;
    sj["split"] = s.split;
    sj["n_samples"] = s.n_samples;
    sj["mrmset"] = number_or_null(s.mrmset);
    sj["mrmset_untransferred"] = number_or_null(s.mrmset_untransferred);
    if (s.mrmset_frequency) {
      sj["mrmset_frequency"] = number_or_null(*s.mrmset_frequency);
      sj["mrmset_frequency_untransferred"] = number_or_null(*s.mrmset_frequency_untransferred);
    }
    sj["bland_altman"] = bland_altman_json(s.bland_altman);
    splits.push_back(sj);
  }
  j["splits"] = splits;
  json props = json::array();
  for (const auto& p : r.properties) {
    json pj;
    pj["property"] = p.property;
    pj["k"] = p.k;
    pj["k_selection"] = cfg.evaluation.k_selection;
    pj["selection_curve"] = p.loo_curve;
    json entries = json::array();
    for (const auto& e : p.rmsep) {
      json ej;
      ej["split"] = e.split;
      ej["master"] = number_or_null(e.master);
      ej["slave"] = number_or_null(e.slave);
      ej["transferred"] = number_or_null(e.transferred);
      ej["failed_transfer"] = e.failed_transfer;
      entries.push_back(ej);
    }
    pj["rmsep"] = entries;
    props.push_back(pj);
  }
  j["properties"] = props;
  if (out.window_search) {
    j["window_search"] = {{"best_window", out.window_search->best_window},
                          {"n_windows", out.window_search->scores.size()}};
  }
  j["notes"] = r.notes;
  json prov;
  json hashes;
  for (const auto& [path, hash] : out.input_hashes) hashes[path] = hash;
  prov["input_sha256"] = hashes;
  prov["config"] = json::parse(config_to_json(cfg));
  prov["mrmset_domain"] = options.mrmset_domain.value_or(cfg.evaluation.mrmset_domain);
  j["provenance"] = prov;
  return j;
}

void write_run_table(const TransferReport& r, const fs::path& path) {
  std::ostringstream ss;
  ss << "transfer,method,property,split,rmsep,failed_transfer\n";
  for (const auto& p : r.properties)
    for (const auto& e : p.rmsep) {
      ss << r.transfer << ",Master," << p.property << ',' << e.split << ',' << fmt(e.master) << ",0\n";
      ss << r.transfer << ",Slave," << p.property << ',' << e.split << ',' << fmt(e.slave) << ",0\n";
      ss << r.transfer << ',' << r.method << ',' << p.property << ',' << e.split << ',' << fmt(e.transferred) << ','
         << (e.failed_transfer ? 1 : 0) << '\n';
    }
  write_text(path, ss.str());
}

ExperimentOutcome run_experiment_impl(const ExperimentConfig& cfg, const RunOptions& options, const fs::path& out_dir) {
  ExperimentData data = load_experiment_data(cfg);
  const std::string domain = options.mrmset_domain.value_or(cfg.evaluation.mrmset_domain);
  if (domain != "wavelength" && domain != "frequency")
    throw Error("cli", "--mrmset-domain must be 'wavelength' or 'frequency'");

  ExperimentOutcome out;
  out.output_dir = out_dir;
  out.input_hashes = data.input_hashes;
  if (cfg.source_path) out.input_hashes[cfg.source_path->filename().string()] = sha256_file(*cfg.source_path);
  out.split = data.split;
  out.report.method = cfg.method_label();
  out.report.transfer = cfg.resolved_transfer_label();
  out.report.notes = data.notes;

  const std::vector<int> fit_rows = subsample_stride(data.split.calibration, cfg.split.fit_stride);
  if (cfg.split.fit_stride > 1)
    out.report.notes.push_back("transfer fitted on every " + std::to_string(cfg.split.fit_stride) +
                               "th calibration sample (" + std::to_string(fit_rows.size()) + " samples)");
  FitResult fit = fit_transfer(cfg, data, fit_rows);
  out.model = fit.model;
  out.window_search = fit.window_search;
  out.report.notes.insert(out.report.notes.end(), fit.notes.begin(), fit.notes.end());

  std::ostringstream diff_csv, ba_csv;
  diff_csv << "split,sample_id";
  for (double wl : data.master.wavelengths) diff_csv << ',' << textio::format_double(wl);
  diff_csv << '\n';
  ba_csv << "split,wavelength,mean,difference,bias,lower,upper\n";

  std::map<std::string, std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> transferred_by_split;  // (transferred, slave)
  for (const char* name : kSplitNames) {
    const auto idx = split_indices(data.split, name);
    if (idx.empty()) continue;
    const SpectralDataset master = data.master.subset(idx);
    const SpectralDataset slave = data.slave.subset(idx);
    Eigen::MatrixXd transferred = out.model.apply(slave.absorbance);

    SplitMetrics m;
    m.split = name;
    m.n_samples = static_cast<int>(idx.size());
    m.mrmset = mrmset(master.absorbance, transferred);
    m.mrmset_untransferred = mrmset(master.absorbance, slave.absorbance);
    const bool freq_ok = master.n_wavelengths() >= 4;
    if (domain == "frequency" && freq_ok) {
      const FrequencySet mf = to_frequency(master.absorbance);
      m.mrmset_frequency = mrmset(mf, to_frequency(transferred));
      m.mrmset_frequency_untransferred = mrmset(mf, to_frequency(slave.absorbance));
    }
    if (master.n_wavelengths() >= 2) {
      m.bland_altman = bland_altman(transferred.colwise().mean().transpose(),
                                    master.absorbance.colwise().mean().transpose(),
                                    cfg.evaluation.bland_altman_multiplier);
      for (int c = 0; c < master.n_wavelengths(); ++c)
        ba_csv << name << ',' << textio::format_double(master.wavelengths[static_cast<size_t>(c)]) << ','
               << fmt(m.bland_altman.means(c)) << ',' << fmt(m.bland_altman.differences(c)) << ','
               << fmt(m.bland_altman.bias) << ',' << fmt(m.bland_altman.lower) << ',' << fmt(m.bland_altman.upper)
               << '\n';
    }
    for (int r = 0; r < master.n_samples(); ++r) {
      diff_csv << name << ',' << master.sample_ids[static_cast<size_t>(r)];
      for (int c = 0; c < master.n_wavelengths(); ++c) diff_csv << ',' << fmt(transferred(r, c) - master.absorbance(r, c));
      diff_csv << '\n';
    }
    if (options.dump_frequency && freq_ok) {
      write_frequency_csv(to_frequency(master.absorbance, master.sample_ids),
                          out_dir / ("frequency_" + std::string(name) + "_master.csv"));
      write_frequency_csv(to_frequency(slave.absorbance, slave.sample_ids),
                          out_dir / ("frequency_" + std::string(name) + "_slave.csv"));
      write_frequency_csv(to_frequency(transferred, slave.sample_ids),
                          out_dir / ("frequency_" + std::string(name) + "_transferred.csv"));
    }
    out.report.splits.push_back(std::move(m));
    transferred_by_split[name] = {std::move(transferred), slave.absorbance};
  }

  // PCR on master calibration; predictions on the held-out splits.
  std::ostringstream loo_csv;
  loo_csv << "property,k,selection,rmse\n";
  std::vector<std::string> eval_splits;
  for (const char* name : {"validation", "test"})
    if (!split_indices(data.split, name).empty()) eval_splits.push_back(name);
  if (eval_splits.empty()) eval_splits.push_back("calibration");

  for (const auto& prop : cfg.evaluation.properties) {
    const SpectralDataset cal = data.master.subset(data.split.calibration);
    const Eigen::VectorXd y = cal.property(prop);
    const int n = cal.n_samples();
    const int k_cap = std::min({cfg.evaluation.k_max, n - 2, cal.n_wavelengths()});
    if (k_cap < 1) throw Error("cli", "too few calibration samples for PCR on '" + prop + "'");
    if (k_cap < cfg.evaluation.k_max)
      out.report.notes.push_back("k_max for '" + prop + "' capped at " + std::to_string(k_cap));

    PropertyMetrics pm;
    pm.property = prop;
    if (cfg.evaluation.k_selection == "validation") {
      if (data.split.validation.empty()) throw Error("cli", "k_selection 'validation' needs a validation split");
      const SpectralDataset val = data.master.subset(data.split.validation);
      const Eigen::VectorXd yv = val.property(prop);
      double best = std::numeric_limits<double>::infinity();
      for (int k = 1; k <= k_cap; ++k) {
        const double e = rmsep(yv, pcr_predict(pcr_fit(cal.absorbance, y, k), val.absorbance));
        pm.loo_curve.push_back(e);
        if (e < best) {
          best = e;
          pm.k = k;
        }
      }
    } else {
      LooResult loo = loo_select_k(cal.absorbance, y, k_cap);
      pm.k = loo.best_k;
      pm.loo_curve = loo.rmsecv;
    }
    for (size_t k = 0; k < pm.loo_curve.size(); ++k)
      loo_csv << prop << ',' << k + 1 << ',' << cfg.evaluation.k_selection << ',' << fmt(pm.loo_curve[k]) << '\n';

    const PcrModel model = pcr_fit(cal.absorbance, y, pm.k);
    for (const auto& name : eval_splits) {
      const auto idx = split_indices(data.split, name);
      const SpectralDataset master = data.master.subset(idx);
      const Eigen::VectorXd truth = master.property(prop);
      const auto& [transferred, slave] = transferred_by_split.at(name);
      PropertyMetrics::Entry e;
      e.split = name;
      e.master = rmsep(truth, pcr_predict(model, master.absorbance));
      e.slave = rmsep(truth, pcr_predict(model, slave));
      e.transferred = rmsep(truth, pcr_predict(model, transferred));
      e.failed_transfer = e.transferred > e.slave;
      pm.rmsep.push_back(e);
    }
    out.report.properties.push_back(std::move(pm));
  }

  write_text(out_dir / "diff_spectra.csv", diff_csv.str());
  write_text(out_dir / "bland_altman.csv", ba_csv.str());
  write_text(out_dir / "loo_curves.csv", loo_csv.str());
  if (out.window_search) {
    std::ostringstream ws;
    ws << "window,mrmset\n";
    for (const auto& s : out.window_search->scores) ws << s.window << ',' << fmt(s.mrmset) << '\n';
    write_text(out_dir / "window_search.csv", ws.str());
  }
  write_run_table(out.report, out_dir / "table.csv");
  save_models(out.model, out_dir);
  write_text(out_dir / "report.json", report_json(cfg, out, options).dump(2) + "\n");
  return out;
}

fs::path output_dir_for(const ExperimentConfig& cfg, const RunOptions& options) {
  if (options.output_dir) return *options.output_dir;
  if (cfg.output_dir.empty()) throw Error("cli", "no output directory (set output_dir or pass --out)");
  return cfg.resolve(cfg.output_dir);
}

template <typename Fn>
auto with_failure_marker(const fs::path& out_dir, Fn&& fn) {
  fs::create_directories(out_dir);
  const fs::path marker = out_dir / "FAILED";
  fs::remove(marker);
  try {
    return fn();
  } catch (const std::exception& e) {
    write_text(marker, std::string(e.what()) + "\n");
    throw;
  }
}

}  // namespace

ExperimentOutcome run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  const fs::path out_dir = output_dir_for(config, options);
  return with_failure_marker(out_dir, [&] { return run_experiment_impl(config, options, out_dir); });
}

std::vector<ExperimentOutcome> compare_methods(const std::vector<ExperimentConfig>& configs, const fs::path& output_dir,
                                               const RunOptions& options) {
  if (configs.empty()) throw Error("cli", "compare needs at least one config");
  return with_failure_marker(output_dir, [&] {
    std::vector<ExperimentOutcome> outcomes;
    for (size_t i = 0; i < configs.size(); ++i) {
      RunOptions run = options;
      std::string slug = configs[i].method_label();
      for (char& ch : slug)
        if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
      std::ostringstream dir;
      dir << "run" << std::setw(2) << std::setfill('0') << i << '_' << slug;
      run.output_dir = output_dir / dir.str();
      outcomes.push_back(run_experiment(configs[i], run));
    }

    // Configs for the same transfer must describe the same data and splits.
    std::map<std::string, size_t> first_of;
    for (size_t i = 0; i < outcomes.size(); ++i) {
      const std::string& t = outcomes[i].report.transfer;
      auto [it, inserted] = first_of.emplace(t, i);
      if (inserted) continue;
      const auto& a = outcomes[it->second];
      const auto& b = outcomes[i];
      auto data_hashes = [](const ExperimentOutcome& o, const ExperimentConfig& c) {
        std::map<std::string, std::string> h = o.input_hashes;
        if (c.source_path) h.erase(c.source_path->filename().string());
        std::set<std::string> values;
        for (const auto& [k, v] : h) values.insert(v);
        return values;
      };
      if (data_hashes(a, configs[it->second]) != data_hashes(b, configs[i]) ||
          a.split.calibration != b.split.calibration || a.split.validation != b.split.validation ||
          a.split.test != b.split.test)
        throw Error("cli", "configs " + std::to_string(it->second) + " and " + std::to_string(i) + " for transfer '" +
                               t + "' use different datasets or splits");
    }

    // Long table with a best marker per (transfer, property, split) among methods.
    struct Row {
      std::string transfer, method, property, split;
      double rmsep;
      bool failed;
      bool is_method;
    };
    std::vector<Row> rows;
    std::set<std::string> baseline_done;
    for (const auto& o : outcomes) {
      const auto& r = o.report;
      for (const auto& p : r.properties)
        for (const auto& e : p.rmsep) {
          const std::string key = r.transfer + "|" + p.property + "|" + e.split;
          if (baseline_done.insert(key).second) {
            rows.push_back({r.transfer, "Master", p.property, e.split, e.master, false, false});
            rows.push_back({r.transfer, "Slave", p.property, e.split, e.slave, false, false});
          }
          rows.push_back({r.transfer, r.method, p.property, e.split, e.transferred, e.failed_transfer, true});
        }
    }
    std::map<std::string, double> best;
    for (const auto& row : rows) {
      if (!row.is_method) continue;
      const std::string key = row.transfer + "|" + row.property + "|" + row.split;
      auto it = best.find(key);
      if (it == best.end() || row.rmsep < it->second) best[key] = row.rmsep;
    }
    auto is_best = [&](const Row& row) {
      return row.is_method && row.rmsep == best.at(row.transfer + "|" + row.property + "|" + row.split);
    };

    std::ostringstream table;
    table << "transfer,method,property,split,rmsep,best,failed_transfer\n";
    for (const auto& row : rows)
      table << row.transfer << ',' << row.method << ',' << row.property << ',' << row.split << ',' << fmt(row.rmsep)
            << ',' << (is_best(row) ? 1 : 0) << ',' << (row.failed ? 1 : 0) << '\n';
    write_text(output_dir / "table.csv", table.str());

    // Wide view: one row per method label, one column per transfer/property/split.
    std::vector<std::string> columns, methods;
    std::map<std::pair<std::string, std::string>, std::string> cells;
    for (const auto& row : rows) {
      const std::string col = row.transfer + "|" + row.property + "|" + row.split;
      if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
      std::string method = row.method;
      int dup = 1;
      while (row.is_method && cells.count({method, col})) method = row.method + "#" + std::to_string(++dup);
      if (std::find(methods.begin(), methods.end(), method) == methods.end()) methods.push_back(method);
      cells[{method, col}] = fmt(row.rmsep) + (is_best(row) ? "*" : "");
    }
    std::ostringstream wide;
    wide << "method";
    for (const auto& c : columns) wide << ',' << c;
    wide << '\n';
    for (const auto& m : methods) {
      wide << m;
      for (const auto& c : columns) {
        auto it = cells.find({m, c});
        wide << ',' << (it == cells.end() ? "" : it->second);
      }
      wide << '\n';
    }
    write_text(output_dir / "table_wide.csv", wide.str());

    json summary;
    summary["report_schema_version"] = kReportSchemaVersion;
    json runs = json::array();
    for (const auto& o : outcomes)
      runs.push_back({{"method", o.report.method},
                      {"transfer", o.report.transfer},
                      {"directory", o.output_dir.filename().string()}});
    summary["runs"] = runs;
    write_text(output_dir / "report.json", summary.dump(2) + "\n");
    return outcomes;
  });
}

WindowSearchResult run_window_search(const ExperimentConfig& config, int min_window, int max_window,
                                     const fs::path& output_dir) {
  return with_failure_marker(output_dir, [&] {
    ExperimentData data = load_experiment_data(config);
    if (data.split.validation.empty()) throw Error("cli", "window search needs a validation split");
    const auto fit_rows = subsample_stride(data.split.calibration, config.split.fit_stride);
    WindowSearchResult result = pds_window_search(
        data.master.subset(fit_rows).absorbance, data.slave.subset(fit_rows).absorbance,
        data.master.subset(data.split.validation).absorbance, data.slave.subset(data.split.validation).absorbance,
        min_window, max_window, config.method.mean_correction);
    std::ostringstream ws;
    ws << "window,mrmset\n";
    for (const auto& s : result.scores) ws << s.window << ',' << fmt(s.mrmset) << '\n';
    write_text(output_dir / "window_search.csv", ws.str());
    json j;
    j["report_schema_version"] = kReportSchemaVersion;
    j["best_window"] = result.best_window;
    j["range"] = {min_window, max_window};
    json hashes;
    for (const auto& [path, hash] : data.input_hashes) hashes[path] = hash;
    j["provenance"] = {{"input_sha256", hashes}, {"config", json::parse(config_to_json(config))}};
    write_text(output_dir / "report.json", j.dump(2) + "\n");
    return result;
  });
}

}  // namespace calxfer
