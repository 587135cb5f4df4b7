#include "calxfer/mfpi.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "calxfer/error.hpp"
#include "calxfer/textio.hpp"

namespace calxfer {

void MfpiConfig::validate(int n_bins) const {
  if (!(tolerance > 0.0)) throw Error("mfpi", "tolerance must be > 0");
  if (max_iter < 1) throw Error("mfpi", "max_iter must be >= 1");
  if (!bins) return;
  std::vector<BinRange> sorted = *bins;
  std::sort(sorted.begin(), sorted.end(), [](const BinRange& l, const BinRange& r) { return l.first < r.first; });
  for (size_t i = 0; i < sorted.size(); ++i) {
    const auto& r = sorted[i];
    if (r.first < 0 || r.last >= n_bins || r.first > r.last)
      throw Error("mfpi", "bin range [" + std::to_string(r.first) + ", " + std::to_string(r.last) + "] outside [0, " +
                              std::to_string(n_bins - 1) + "]");
    if (i > 0 && r.first <= sorted[i - 1].last) throw Error("mfpi", "overlapping bin ranges");
  }
}

bool MfpiConfig::selects(int bin) const {
  if (!bins) return true;
  return std::any_of(bins->begin(), bins->end(), [&](const BinRange& r) { return bin >= r.first && bin <= r.last; });
}

const MfpiBinFit* MfpiModel::find(int bin) const {
  auto it = std::lower_bound(fitted.begin(), fitted.end(), bin,
                             [](const MfpiBinFit& f, int b) { return f.bin < b; });
  return it != fitted.end() && it->bin == bin ? &*it : nullptr;
}

namespace {

struct BinOutcome {
  std::optional<MfpiBinFit> fit;
  std::string warning;
  std::vector<double> trace;
};

struct ScoredQuad {
  FpiMap map;
  double rmse;
  std::array<int, 4> ccw_members;
};

std::optional<ScoredQuad> score_quad(const std::array<int, 4>& members, const std::vector<cplx>& master_c,
                                     const std::vector<cplx>& slave_c) {
  Quad slave_quad;
  for (int k = 0; k < 4; ++k) slave_quad[k] = slave_c[static_cast<size_t>(members[k])];
  try {
    const CcwOrder order = ccw_sort(slave_quad);
    Quad master_quad;
    std::array<int, 4> ccw_members{};
    for (int k = 0; k < 4; ++k) {
      ccw_members[k] = members[order.permutation[k]];
      master_quad[k] = master_c[static_cast<size_t>(ccw_members[k])];
    }
    check_quad(master_quad);
    FpiMap map = fpi_fit(order.points, master_quad);

    double sum = 0.0;
    for (size_t n = 0; n < slave_c.size(); ++n) {
      cplx t = slave_c[n];
      try {
        const cplx mapped = fpi_apply(map, slave_c[n]);
        if (std::isfinite(mapped.real()) && std::isfinite(mapped.imag())) t = mapped;
      } catch (const SingularityError&) {
      }
      sum += std::norm(t - master_c[n]);
    }
    const double rmse = std::sqrt(sum / static_cast<double>(slave_c.size()));
    if (!std::isfinite(rmse)) return std::nullopt;
    return ScoredQuad{map, rmse, ccw_members};
  } catch (const Error&) {
    return std::nullopt;
  }
}

BinOutcome fit_bin(int bin, const FrequencySet& master, const FrequencySet& slave, const MfpiConfig& config,
                   const std::vector<char>& rejected) {
  BinOutcome out;
  const int n = master.n_samples();
  std::vector<cplx> master_c(static_cast<size_t>(n)), slave_c(static_cast<size_t>(n));
  try {
    for (int i = 0; i < n; ++i) {
      master_c[static_cast<size_t>(i)] = cayley(master.coefficients(i, bin));
      slave_c[static_cast<size_t>(i)] = cayley(slave.coefficients(i, bin));
    }
  } catch (const SingularityError&) {
    out.warning = "bin " + std::to_string(bin) + ": coefficient at the Cayley singularity; passed through";
    return out;
  }

  std::vector<int> candidates;
  std::vector<double> difference(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    difference[static_cast<size_t>(i)] = std::abs(master_c[static_cast<size_t>(i)] - slave_c[static_cast<size_t>(i)]);
    if (!rejected[static_cast<size_t>(i)]) candidates.push_back(i);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](int l, int r) {
    return difference[static_cast<size_t>(l)] < difference[static_cast<size_t>(r)];
  });

  std::array<int, 4> quad{candidates[0], candidates[1], candidates[2], candidates[3]};
  size_t next = 4;

  std::optional<ScoredQuad> best = score_quad(quad, master_c, slave_c);
  const double initial = best ? best->rmse : std::numeric_limits<double>::infinity();
  out.trace.push_back(initial);

  int iter = 0;
  while (!(best && best->rmse < config.tolerance) && iter < config.max_iter && next < candidates.size()) {
    quad[static_cast<size_t>(iter % 4)] = candidates[next++];
    auto scored = score_quad(quad, master_c, slave_c);
    if (scored && (!best || scored->rmse < best->rmse)) best = std::move(scored);
    out.trace.push_back(best ? best->rmse : std::numeric_limits<double>::infinity());
    ++iter;
  }

  if (!best) {
    out.warning = "bin " + std::to_string(bin) + ": every candidate quad was degenerate; passed through";
    return out;
  }
  MfpiBinFit fit;
  fit.bin = bin;
  fit.map = best->map;
  fit.best_rmse = best->rmse;
  fit.initial_rmse = initial;
  fit.iterations = iter;
  for (int k = 0; k < 4; ++k) fit.quad_sample_ids[k] = slave.sample_ids[static_cast<size_t>(best->ccw_members[k])];
  out.fit = std::move(fit);
  return out;
}

}  // namespace

MfpiModel mfpi_fit(const FrequencySet& master, const FrequencySet& slave, const MfpiConfig& config,
                   MfpiDiagnostics* diagnostics, int threads) {
  if (master.n_wavelengths != slave.n_wavelengths || master.n_bins() != slave.n_bins())
    throw Error("mfpi", "master and slave frequency sets have different widths");
  if (master.n_samples() != slave.n_samples())
    throw Error("mfpi", "master and slave must hold the same paired samples");
  const int n = slave.n_samples();
  if (n < 5) throw Error("mfpi", "need at least 5 paired samples, got " + std::to_string(n));
  const int n_bins = slave.n_bins();
  config.validate(n_bins);

  std::vector<char> rejected(static_cast<size_t>(n), 0);
  for (const auto& id : config.reject) {
    auto it = std::find(slave.sample_ids.begin(), slave.sample_ids.end(), id);
    if (it == slave.sample_ids.end()) throw Error("mfpi", "rejected sample '" + id + "' not in the slave set");
    rejected[static_cast<size_t>(it - slave.sample_ids.begin())] = 1;
  }
  const auto usable = std::count(rejected.begin(), rejected.end(), 0);
  if (usable < 4) throw Error("mfpi", "fewer than 4 samples remain after rejection");

  std::vector<int> selected;
  for (int b = 0; b < n_bins; ++b)
    if (config.selects(b)) selected.push_back(b);

  std::vector<BinOutcome> outcomes(selected.size());
  std::atomic<size_t> cursor{0};
  auto worker = [&] {
    for (size_t k = cursor++; k < selected.size(); k = cursor++)
      outcomes[k] = fit_bin(selected[k], master, slave, config, rejected);
  };
  int n_threads = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::clamp(n_threads, 1, std::max(1, static_cast<int>(selected.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  MfpiModel model;
  model.n_wavelengths = slave.n_wavelengths;
  model.n_bins = n_bins;
  model.config = config;
  model.provenance = Provenance::fitted("slave", "mfpi");
  if (diagnostics) diagnostics->retained_rmse.assign(static_cast<size_t>(n_bins), {});
  size_t k = 0;
  for (int b = 0; b < n_bins; ++b) {
    if (k < selected.size() && selected[k] == b) {
      auto& outcome = outcomes[k++];
      if (diagnostics) diagnostics->retained_rmse[static_cast<size_t>(b)] = outcome.trace;
      if (outcome.fit) {
        model.fitted.push_back(std::move(*outcome.fit));
      } else {
        model.pass_through.push_back(b);
        ++model.degenerate_bins;
        model.warnings.push_back(outcome.warning);
      }
    } else {
      model.pass_through.push_back(b);
    }
  }
  return model;
}

FrequencySet mfpi_transfer_frequency(const MfpiModel& model, const FrequencySet& slave, Eigen::VectorXi* fallback_bins) {
  if (slave.n_wavelengths != model.n_wavelengths || slave.n_bins() != model.n_bins)
    throw Error("mfpi", "spectra width " + std::to_string(slave.n_wavelengths) + " does not match model width " +
                            std::to_string(model.n_wavelengths));
  FrequencySet out = slave;
  Eigen::VectorXi fallbacks = Eigen::VectorXi::Zero(slave.n_samples());
  for (const auto& fit : model.fitted) {
    for (int r = 0; r < slave.n_samples(); ++r) {
      try {
        const cplx mapped = inverse_cayley(fpi_apply(fit.map, cayley(slave.coefficients(r, fit.bin))));
        if (std::isfinite(mapped.real()) && std::isfinite(mapped.imag())) {
          out.coefficients(r, fit.bin) = mapped;
          continue;
        }
      } catch (const SingularityError&) {
      }
      ++fallbacks(r);
    }
  }
  if (fallback_bins) *fallback_bins = fallbacks;
  return out;
}

MfpiTransferResult mfpi_transfer(const MfpiModel& model, const Eigen::MatrixXd& slave_spectra) {
  if (slave_spectra.cols() != model.n_wavelengths)
    throw Error("mfpi", "spectra width " + std::to_string(slave_spectra.cols()) + " does not match model width " +
                            std::to_string(model.n_wavelengths));
  MfpiTransferResult result;
  const FrequencySet transformed =
      mfpi_transfer_frequency(model, to_frequency(slave_spectra), &result.residual.fallback_bins);
  WavelengthResult back = to_wavelength(transformed);
  result.spectra = std::move(back.spectra);
  result.residual.imaginary_residual = std::move(back.imaginary_residual);
  return result;
}

// ---------------------------------------------------------------------------
// Model file: line oriented, every real with 17 significant digits.

namespace {

constexpr const char* kMfpiMagic = "calxfer-mfpi-model";
constexpr int kMfpiVersion = 1;

void put_complex(std::ostream& out, cplx z) {
  out << ' ' << textio::format_double17(z.real()) << ' ' << textio::format_double17(z.imag());
}

void put_moebius(std::ostream& out, const char* tag, const MoebiusMap& m) {
  out << tag;
  for (cplx z : {m.a, m.b, m.c, m.d}) put_complex(out, z);
  out << '\n';
}

class LineReader {
 public:
  explicit LineReader(const std::filesystem::path& path) : lines_(textio::read_lines(path.string())) {}

  const std::string& raw() {
    if (pos_ >= lines_.size()) throw Error("mfpi", "model file truncated at line " + std::to_string(pos_ + 1));
    return lines_[pos_++];
  }

  std::vector<std::string> tokens(const std::string& expect_tag) {
    std::istringstream ss(raw());
    std::vector<std::string> out;
    for (std::string tok; ss >> tok;) out.push_back(tok);
    if (out.empty() || out[0] != expect_tag)
      throw Error("mfpi", "model file line " + std::to_string(pos_) + ": expected '" + expect_tag + "'");
    return out;
  }

  double number(const std::string& token) {
    auto v = textio::parse_double(token);
    if (!v) throw Error("mfpi", "model file line " + std::to_string(pos_) + ": bad number '" + token + "'");
    return *v;
  }

  int integer(const std::string& token) { return static_cast<int>(number(token)); }

  std::vector<double> numbers(const std::string& tag, size_t count) {
    auto t = tokens(tag);
    if (t.size() != count + 1) throw Error("mfpi", "model file line " + std::to_string(pos_) + ": wrong field count");
    std::vector<double> out;
    for (size_t i = 1; i < t.size(); ++i) out.push_back(number(t[i]));
    return out;
  }

  int count(const std::string& tag) { return integer(tokens(tag).at(1)); }

 private:
  std::vector<std::string> lines_;
  size_t pos_ = 0;
};

MoebiusMap read_moebius(LineReader& in, const std::string& tag) {
  auto v = in.numbers(tag, 8);
  return {{v[0], v[1]}, {v[2], v[3]}, {v[4], v[5]}, {v[6], v[7]}};
}

}  // namespace

void save_mfpi_model(const MfpiModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("mfpi", "cannot write " + path.string());
  out << kMfpiMagic << ' ' << kMfpiVersion << '\n';
  out << "n_wavelengths " << model.n_wavelengths << '\n';
  out << "n_bins " << model.n_bins << '\n';
  out << "tolerance " << textio::format_double17(model.config.tolerance) << '\n';
  out << "max_iter " << model.config.max_iter << '\n';
  if (!model.config.bins) {
    out << "bins all\n";
  } else {
    out << "bins " << model.config.bins->size() << '\n';
    for (const auto& r : *model.config.bins) out << "range " << r.first << ' ' << r.last << '\n';
  }
  out << "reject " << model.config.reject.size() << '\n';
  for (const auto& id : model.config.reject) out << id << '\n';
  out << "provenance\n" << model.provenance.input << '\n' << model.provenance.output << '\n';
  out << "degenerate_bins " << model.degenerate_bins << '\n';
  out << "warnings " << model.warnings.size() << '\n';
  for (const auto& w : model.warnings) out << w << '\n';
  out << "pass_through " << model.pass_through.size();
  for (int b : model.pass_through) out << ' ' << b;
  out << '\n';
  out << "fitted " << model.fitted.size() << '\n';
  for (const auto& f : model.fitted) {
    out << "bin " << f.bin << ' ' << f.iterations << '\n';
    out << "rmse " << textio::format_double17(f.best_rmse) << ' ' << textio::format_double17(f.initial_rmse) << '\n';
    put_moebius(out, "forward", f.map.forward);
    put_moebius(out, "backward", f.map.backward);
    out << "affine";
    for (cplx z : {f.map.blend.w, f.map.blend.z, f.map.blend.l}) put_complex(out, z);
    out << '\n';
    out << "quad\n";
    for (const auto& id : f.quad_sample_ids) out << id << '\n';
  }
  out << "end\n";
}

MfpiModel load_mfpi_model(const std::filesystem::path& path) {
  LineReader in(path);
  MfpiModel model;
  auto head = in.tokens(kMfpiMagic);
  if (head.size() != 2 || in.integer(head[1]) != kMfpiVersion) throw Error("mfpi", "unsupported model file version");
  model.n_wavelengths = in.count("n_wavelengths");
  model.n_bins = in.count("n_bins");
  model.config.tolerance = in.numbers("tolerance", 1)[0];
  model.config.max_iter = in.count("max_iter");
  auto bins = in.tokens("bins");
  if (bins.at(1) != "all") {
    std::vector<BinRange> ranges;
    const int count = in.integer(bins[1]);
    for (int i = 0; i < count; ++i) {
      auto r = in.numbers("range", 2);
      ranges.push_back({static_cast<int>(r[0]), static_cast<int>(r[1])});
    }
    model.config.bins = std::move(ranges);
  }
  const int n_reject = in.count("reject");
  for (int i = 0; i < n_reject; ++i) model.config.reject.push_back(in.raw());
  in.tokens("provenance");
  model.provenance.input = in.raw();
  model.provenance.output = in.raw();
  model.degenerate_bins = in.count("degenerate_bins");
  const int n_warn = in.count("warnings");
  for (int i = 0; i < n_warn; ++i) model.warnings.push_back(in.raw());
  auto pass = in.tokens("pass_through");
  const int n_pass = in.integer(pass.at(1));
  if (static_cast<int>(pass.size()) != n_pass + 2) throw Error("mfpi", "pass_through count mismatch");
  for (int i = 0; i < n_pass; ++i) model.pass_through.push_back(in.integer(pass[static_cast<size_t>(i) + 2]));
  const int n_fit = in.count("fitted");
  for (int i = 0; i < n_fit; ++i) {
    MfpiBinFit f;
    auto b = in.tokens("bin");
    f.bin = in.integer(b.at(1));
    f.iterations = in.integer(b.at(2));
    auto r = in.numbers("rmse", 2);
    f.best_rmse = r[0];
    f.initial_rmse = r[1];
    f.map.forward = read_moebius(in, "forward");
    f.map.backward = read_moebius(in, "backward");
    auto a = in.numbers("affine", 6);
    f.map.blend = {{a[0], a[1]}, {a[2], a[3]}, {a[4], a[5]}};
    in.tokens("quad");
    for (auto& id : f.quad_sample_ids) id = in.raw();
    model.fitted.push_back(std::move(f));
  }
  in.tokens("end");
  if (static_cast<int>(model.fitted.size() + model.pass_through.size()) != model.n_bins)
    throw Error("mfpi", "model file does not cover every bin");
  return model;
}

}  // namespace calxfer
