#include "calxfer/standardization.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include "calxfer/chemometrics.hpp"
#include "calxfer/dataset.hpp"
#include "calxfer/error.hpp"
#include "calxfer/textio.hpp"

namespace calxfer {

namespace {

void check_pair(const Eigen::MatrixXd& master, const Eigen::MatrixXd& slave) {
  if (master.rows() != slave.rows() || master.cols() != slave.cols())
    throw Error("standardization", "master " + std::to_string(master.rows()) + "x" + std::to_string(master.cols()) +
                                       " and slave " + std::to_string(slave.rows()) + "x" +
                                       std::to_string(slave.cols()) + " calibration shapes differ");
  if (master.rows() < 2) throw Error("standardization", "need at least 2 calibration samples");
  if (!master.allFinite() || !slave.allFinite()) throw Error("standardization", "non-finite calibration spectra");
}

struct Prepared {
  Eigen::MatrixXd master;
  Eigen::MatrixXd slave;
  std::optional<Centering> centering;
};

Prepared prepare(const Eigen::MatrixXd& master_cal, const Eigen::MatrixXd& slave_cal, bool mean_correction) {
  if (!mean_correction) return {master_cal, slave_cal, std::nullopt};
  auto [mc, mm] = mean_center(master_cal);
  auto [sc, sm] = mean_center(slave_cal);
  return {std::move(mc), std::move(sc), Centering{std::move(mm), std::move(sm)}};
}

Eigen::MatrixXd centred_input(const std::optional<Centering>& centering, const Eigen::MatrixXd& slave) {
  if (!centering) return slave;
  return slave.rowwise() - centering->slave_mean;
}

void add_master_mean(const std::optional<Centering>& centering, Eigen::MatrixXd& out) {
  if (centering) out.rowwise() += centering->master_mean;
}

template <typename Fn>
void parallel_for(int count, int threads, Fn&& fn) {
  int n_threads = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::clamp(n_threads, 1, std::max(1, count));
  std::atomic<int> cursor{0};
  auto worker = [&] {
    for (int k = cursor++; k < count; k = cursor++) fn(k);
  };
  if (n_threads == 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace

DsModel ds_fit(const Eigen::MatrixXd& master_cal, const Eigen::MatrixXd& slave_cal, bool mean_correction,
               const std::string& input_space) {
  check_pair(master_cal, slave_cal);
  Prepared p = prepare(master_cal, slave_cal, mean_correction);
  PinvSolution sol = pinv_solve(p.slave, p.master);
  DsModel model;
  model.f_matrix = std::move(sol.x);
  model.effective_rank = sol.rank;
  model.centering = std::move(p.centering);
  model.provenance = Provenance::fitted(input_space, "ds");
  return model;
}

Eigen::MatrixXd ds_apply(const DsModel& model, const Eigen::MatrixXd& slave) {
  if (slave.cols() != model.n_wavelengths())
    throw Error("standardization", "spectra width " + std::to_string(slave.cols()) + " does not match DS model width " +
                                       std::to_string(model.n_wavelengths()));
  Eigen::MatrixXd out = centred_input(model.centering, slave) * model.f_matrix;
  add_master_mean(model.centering, out);
  return out;
}

int pds_window_start(int column, int window, int n_wavelengths) {
  const int half = (window - 1) / 2;
  return std::clamp(column - half, 0, n_wavelengths - window);
}

PdsModel pds_fit(const Eigen::MatrixXd& master_cal, const Eigen::MatrixXd& slave_cal, int window, bool mean_correction,
                 const std::string& input_space, int threads) {
  check_pair(master_cal, slave_cal);
  const int m = static_cast<int>(master_cal.cols());
  if (window < 3 || window > m)
    throw Error("standardization", "PDS window " + std::to_string(window) + " outside [3, " + std::to_string(m) + "]");
  if (window % 2 == 0) throw Error("standardization", "PDS window must be odd, got " + std::to_string(window));

  Prepared p = prepare(master_cal, slave_cal, mean_correction);
  PdsModel model;
  model.n_wavelengths = m;
  model.window = window;
  model.starts.resize(static_cast<size_t>(m));
  model.coefficients.resize(static_cast<size_t>(m));
  model.effective_ranks.resize(static_cast<size_t>(m));
  parallel_for(m, threads, [&](int j) {
    const int start = pds_window_start(j, window, m);
    PinvSolution sol = pinv_solve(p.slave.middleCols(start, window), p.master.col(j));
    model.starts[static_cast<size_t>(j)] = start;
    model.coefficients[static_cast<size_t>(j)] = sol.x.col(0);
    model.effective_ranks[static_cast<size_t>(j)] = sol.rank;
  });
  model.centering = std::move(p.centering);
  model.provenance = Provenance::fitted(input_space, "pds");
  return model;
}

Eigen::MatrixXd pds_apply(const PdsModel& model, const Eigen::MatrixXd& slave) {
  if (slave.cols() != model.n_wavelengths)
    throw Error("standardization", "spectra width " + std::to_string(slave.cols()) +
                                       " does not match PDS model width " + std::to_string(model.n_wavelengths));
  const Eigen::MatrixXd input = centred_input(model.centering, slave);
  Eigen::MatrixXd out(slave.rows(), model.n_wavelengths);
  for (int j = 0; j < model.n_wavelengths; ++j)
    out.col(j) = input.middleCols(model.starts[static_cast<size_t>(j)], model.window) *
                 model.coefficients[static_cast<size_t>(j)];
  add_master_mean(model.centering, out);
  return out;
}

Eigen::MatrixXd PdsModel::to_dense() const {
  Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(n_wavelengths, n_wavelengths);
  for (int j = 0; j < n_wavelengths; ++j)
    dense.col(j).segment(starts[static_cast<size_t>(j)], window) = coefficients[static_cast<size_t>(j)];
  return dense;
}

WindowSearchResult pds_window_search(const Eigen::MatrixXd& master_cal, const Eigen::MatrixXd& slave_cal,
                                     const Eigen::MatrixXd& master_val, const Eigen::MatrixXd& slave_val,
                                     int min_window, int max_window, bool mean_correction) {
  const int m = static_cast<int>(master_cal.cols());
  if (master_val.rows() == 0 || master_val.rows() != slave_val.rows() || master_val.cols() != m ||
      slave_val.cols() != m)
    throw Error("standardization", "window search needs a paired validation set of matching width");
  min_window = std::max(min_window, 3);
  max_window = std::min(max_window, m);
  if (min_window % 2 == 0) ++min_window;
  if (min_window > max_window)
    throw Error("standardization", "empty PDS window range");

  WindowSearchResult result;
  double best = std::numeric_limits<double>::infinity();
  for (int w = min_window; w <= max_window; w += 2) {
    const PdsModel model = pds_fit(master_cal, slave_cal, w, mean_correction);
    const double score = mrmset(master_val, pds_apply(model, slave_val));
    result.scores.push_back({w, score});
    if (score < best) {
      best = score;
      result.best_window = w;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Model files.

namespace {

constexpr int kModelVersion = 1;

void put_row(std::ostream& out, const char* tag, const Eigen::RowVectorXd& row) {
  out << tag;
  for (Eigen::Index i = 0; i < row.size(); ++i) out << ' ' << textio::format_double17(row(i));
  out << '\n';
}

void put_header(std::ostream& out, const Provenance& prov, const std::optional<Centering>& c, double tol) {
  out << "rank_tolerance " << textio::format_double17(tol) << '\n';
  out << "provenance\n" << prov.input << '\n' << prov.output << '\n';
  out << "mean_correction " << (c ? 1 : 0) << '\n';
  if (c) {
    put_row(out, "master_mean", c->master_mean);
    put_row(out, "slave_mean", c->slave_mean);
  }
}

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : lines_(textio::read_lines(path.string())) {}

  const std::string& raw() {
    if (pos_ >= lines_.size()) throw Error("standardization", "model file truncated");
    return lines_[pos_++];
  }

  std::vector<std::string> tokens(const std::string& tag) {
    std::istringstream ss(raw());
    std::vector<std::string> out;
    for (std::string tok; ss >> tok;) out.push_back(tok);
    if (out.empty() || out[0] != tag)
      throw Error("standardization", "model file line " + std::to_string(pos_) + ": expected '" + tag + "'");
    return out;
  }

  double number(const std::string& tok) {
    auto v = textio::parse_double(tok);
    if (!v) throw Error("standardization", "model file line " + std::to_string(pos_) + ": bad number");
    return *v;
  }

  Eigen::RowVectorXd row(const std::string& tag, Eigen::Index expected) {
    auto t = tokens(tag);
    if (static_cast<Eigen::Index>(t.size()) != expected + 1)
      throw Error("standardization", "model file line " + std::to_string(pos_) + ": wrong field count");
    Eigen::RowVectorXd out(expected);
    for (Eigen::Index i = 0; i < expected; ++i) out(i) = number(t[static_cast<size_t>(i) + 1]);
    return out;
  }

  int integer(const std::string& tag) { return static_cast<int>(number(tokens(tag).at(1))); }

 private:
  std::vector<std::string> lines_;
  size_t pos_ = 0;
};

struct CommonHeader {
  Provenance provenance;
  std::optional<Centering> centering;
  double rank_tolerance;
};

void read_magic(Reader& in, const std::string& magic) {
  auto head = in.tokens(magic);
  if (head.size() != 2 || in.number(head[1]) != kModelVersion)
    throw Error("standardization", "unsupported model file version");
}

CommonHeader read_header(Reader& in, int n_wavelengths_hint) {
  CommonHeader h;
  h.rank_tolerance = in.number(in.tokens("rank_tolerance").at(1));
  in.tokens("provenance");
  h.provenance.input = in.raw();
  h.provenance.output = in.raw();
  if (in.integer("mean_correction")) {
    Centering c;
    c.master_mean = in.row("master_mean", n_wavelengths_hint);
    c.slave_mean = in.row("slave_mean", n_wavelengths_hint);
    h.centering = std::move(c);
  }
  return h;
}

}  // namespace

void save_ds_model(const DsModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("standardization", "cannot write " + path.string());
  out << "calxfer-ds-model " << kModelVersion << '\n';
  out << "n_wavelengths " << model.n_wavelengths() << '\n';
  out << "effective_rank " << model.effective_rank << '\n';
  put_header(out, model.provenance, model.centering, model.rank_tolerance);
  for (int r = 0; r < model.n_wavelengths(); ++r) put_row(out, "f", model.f_matrix.row(r));
  out << "end\n";
}

DsModel load_ds_model(const std::filesystem::path& path) {
  Reader in(path);
  DsModel model;
  read_magic(in, "calxfer-ds-model");
  const int m = in.integer("n_wavelengths");
  model.effective_rank = in.integer("effective_rank");
  CommonHeader h = read_header(in, m);
  model.provenance = h.provenance;
  model.centering = h.centering;
  model.rank_tolerance = h.rank_tolerance;
  model.f_matrix.resize(m, m);
  for (int r = 0; r < m; ++r) model.f_matrix.row(r) = in.row("f", m);
  in.tokens("end");
  return model;
}

void save_pds_model(const PdsModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("standardization", "cannot write " + path.string());
  out << "calxfer-pds-model " << kModelVersion << '\n';
  out << "n_wavelengths " << model.n_wavelengths << '\n';
  out << "window " << model.window << '\n';
  put_header(out, model.provenance, model.centering, model.rank_tolerance);
  for (int j = 0; j < model.n_wavelengths; ++j) {
    out << "column " << j << ' ' << model.starts[static_cast<size_t>(j)] << ' '
        << model.effective_ranks[static_cast<size_t>(j)] << '\n';
    put_row(out, "c", model.coefficients[static_cast<size_t>(j)].transpose());
  }
  out << "end\n";
}

PdsModel load_pds_model(const std::filesystem::path& path) {
  Reader in(path);
  PdsModel model;
  read_magic(in, "calxfer-pds-model");
  model.n_wavelengths = in.integer("n_wavelengths");
  model.window = in.integer("window");
  CommonHeader h = read_header(in, model.n_wavelengths);
  model.provenance = h.provenance;
  model.centering = h.centering;
  model.rank_tolerance = h.rank_tolerance;
  for (int j = 0; j < model.n_wavelengths; ++j) {
    auto t = in.tokens("column");
    if (t.size() != 4 || in.number(t[1]) != j) throw Error("standardization", "PDS model column out of order");
    model.starts.push_back(static_cast<int>(in.number(t[2])));
    model.effective_ranks.push_back(static_cast<int>(in.number(t[3])));
    model.coefficients.push_back(in.row("c", model.window).transpose());
  }
  in.tokens("end");
  return model;
}

// ---------------------------------------------------------------------------

namespace {

const Provenance* provenance_of(const TransferStage& stage) {
  return std::visit(
      [](const auto& s) -> const Provenance* {
        if constexpr (std::is_same_v<std::decay_t<decltype(s)>, IdentityTransfer>) {
          return nullptr;
        } else {
          return &s.provenance;
        }
      },
      stage);
}

std::string stage_name(const TransferStage& stage) {
  switch (stage.index()) {
    case 1:
      return "ds";
    case 2:
      return "pds";
    case 3:
      return "mfpi";
    default:
      return "identity";
  }
}

int stage_width(const TransferStage& stage) {
  switch (stage.index()) {
    case 1:
      return std::get<DsModel>(stage).n_wavelengths();
    case 2:
      return std::get<PdsModel>(stage).n_wavelengths;
    case 3:
      return std::get<MfpiModel>(stage).n_wavelengths;
    default:
      return -1;
  }
}

}  // namespace

TransferModel::TransferModel(TransferStage stage) {
  if (!std::holds_alternative<IdentityTransfer>(stage)) stages_.push_back(std::move(stage));
}

Eigen::MatrixXd TransferModel::apply(const Eigen::MatrixXd& slave) const {
  Eigen::MatrixXd x = slave;
  for (const auto& stage : stages_) {
    x = std::visit(
        [&](const auto& s) -> Eigen::MatrixXd {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, DsModel>) {
            return ds_apply(s, x);
          } else if constexpr (std::is_same_v<T, PdsModel>) {
            return pds_apply(s, x);
          } else if constexpr (std::is_same_v<T, MfpiModel>) {
            return mfpi_transfer(s, x).spectra;
          } else {
            return x;
          }
        },
        stage);
  }
  return x;
}

std::string TransferModel::input_space() const {
  return stages_.empty() ? std::string{} : provenance_of(stages_.front())->input;
}

std::string TransferModel::output_space() const {
  return stages_.empty() ? std::string{} : provenance_of(stages_.back())->output;
}

std::string TransferModel::label() const {
  if (stages_.empty()) return "identity";
  std::string out;
  for (const auto& s : stages_) out += (out.empty() ? "" : "-") + stage_name(s);
  return out;
}

TransferModel compose_transfer(const TransferModel& first, const TransferModel& second) {
  if (!first.is_identity() && !second.is_identity() && second.input_space() != first.output_space())
    throw Error("standardization", "composition order violated: second model was fitted on '" +
                                       second.input_space() + "' but first model produces '" +
                                       first.output_space() + "'");
  if (!first.is_identity() && !second.is_identity() &&
      stage_width(first.stages_.back()) != stage_width(second.stages_.front()))
    throw Error("standardization", "cannot compose transfer models of different widths");
  TransferModel out;
  out.stages_ = first.stages_;
  out.stages_.insert(out.stages_.end(), second.stages_.begin(), second.stages_.end());
  return out;
}

}  // namespace calxfer
