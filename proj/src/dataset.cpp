#include "calxfer/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "calxfer/error.hpp"
#include "calxfer/textio.hpp"

namespace calxfer {

namespace {

struct CsvTable {
  std::vector<std::string> header;  // cells of the first non-empty line
  std::vector<int> line_numbers;    // 1-based file line of each data row
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_table(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("dataset", "file not found: " + path.string());
  const auto lines = textio::read_lines(path.string());
  CsvTable table;
  bool have_header = false;
  for (size_t i = 0; i < lines.size(); ++i) {
    std::string_view line = textio::trim(lines[i]);
    if (line.empty()) continue;
    std::vector<std::string> cells;
    for (auto cell : textio::split_commas(line)) cells.emplace_back(textio::trim(cell));
    if (!have_header) {
      table.header = std::move(cells);
      have_header = true;
    } else {
      table.rows.push_back(std::move(cells));
      table.line_numbers.push_back(static_cast<int>(i) + 1);
    }
  }
  if (!have_header) throw LoadError("empty file " + path.string(), 1, 0);
  return table;
}

double parse_cell(const std::string& cell, int row, int column) {
  if (cell.empty()) throw LoadError("blank cell", row, column);
  auto value = textio::parse_double(cell);
  if (!value) throw LoadError("non-numeric value '" + cell + "'", row, column);
  if (!std::isfinite(*value)) throw LoadError("non-finite value '" + cell + "'", row, column);
  return *value;
}

}  // namespace

void SpectralDataset::validate() const {
  const auto n = absorbance.rows();
  const auto m = absorbance.cols();
  if (m < 1) throw Error("dataset", "no wavelengths");
  if (static_cast<Eigen::Index>(wavelengths.size()) != m)
    throw Error("dataset", "wavelength axis length does not match absorbance columns");
  for (size_t j = 1; j < wavelengths.size(); ++j)
    if (!(wavelengths[j] > wavelengths[j - 1]))
      throw Error("dataset", "wavelengths not strictly increasing at column " + std::to_string(j + 1));
  if (!absorbance.allFinite()) throw Error("dataset", "non-finite absorbance");
  if (static_cast<Eigen::Index>(sample_ids.size()) != n)
    throw Error("dataset", "sample id count does not match rows");
  std::set<std::string> seen;
  for (const auto& id : sample_ids)
    if (!seen.insert(id).second) throw Error("dataset", "duplicate sample id '" + id + "'");
  if (properties.cols() != static_cast<Eigen::Index>(property_names.size()))
    throw Error("dataset", "property table width does not match property names");
  if (!property_names.empty() && properties.rows() != n)
    throw Error("dataset", "property table has " + std::to_string(properties.rows()) + " rows, expected " +
                               std::to_string(n));
  if (!properties.allFinite()) throw Error("dataset", "non-finite property value");
}

Eigen::VectorXd SpectralDataset::property(const std::string& name) const {
  auto it = std::find(property_names.begin(), property_names.end(), name);
  if (it == property_names.end()) throw Error("dataset", "unknown property '" + name + "'");
  return properties.col(it - property_names.begin());
}

SpectralDataset SpectralDataset::subset(std::span<const int> indices) const {
  SpectralDataset out;
  out.instrument_id = instrument_id;
  out.wavelengths = wavelengths;
  out.property_names = property_names;
  out.absorbance.resize(static_cast<Eigen::Index>(indices.size()), absorbance.cols());
  out.properties.resize(property_names.empty() ? 0 : static_cast<Eigen::Index>(indices.size()),
                        static_cast<Eigen::Index>(property_names.size()));
  for (size_t r = 0; r < indices.size(); ++r) {
    const int i = indices[r];
    if (i < 0 || i >= n_samples()) throw Error("dataset", "subset index out of range: " + std::to_string(i));
    out.absorbance.row(static_cast<Eigen::Index>(r)) = absorbance.row(i);
    if (!property_names.empty()) out.properties.row(static_cast<Eigen::Index>(r)) = properties.row(i);
    out.sample_ids.push_back(sample_ids[static_cast<size_t>(i)]);
  }
  return out;
}

void DatasetSplit::validate(int n_samples) const {
  if (calibration.empty()) throw Error("dataset", "calibration split is empty");
  std::vector<char> used(static_cast<size_t>(n_samples), 0);
  for (const auto* list : {&calibration, &validation, &test}) {
    for (int i : *list) {
      if (i < 0 || i >= n_samples) throw Error("dataset", "split index out of range: " + std::to_string(i));
      if (used[static_cast<size_t>(i)]) throw Error("dataset", "split index used twice: " + std::to_string(i));
      used[static_cast<size_t>(i)] = 1;
    }
  }
}

SpectralDataset load_csv(const std::filesystem::path& spectra_path,
                         const std::optional<std::filesystem::path>& properties_path,
                         const std::string& instrument_id) {
  const CsvTable table = read_table(spectra_path);
  const bool has_ids = !table.header.empty() && table.header.front() == "sample_id";
  const size_t first = has_ids ? 1 : 0;
  if (table.header.size() <= first) throw LoadError("header has no wavelengths", 1, 0);

  SpectralDataset ds;
  ds.instrument_id = instrument_id;
  for (size_t c = first; c < table.header.size(); ++c) {
    const int col = static_cast<int>(c) + 1;
    if (table.header[c].empty()) throw LoadError("blank wavelength in header", 1, col);
    auto wl = textio::parse_double(table.header[c]);
    if (!wl || !std::isfinite(*wl)) throw LoadError("malformed wavelength '" + table.header[c] + "'", 1, col);
    if (!ds.wavelengths.empty() && !(*wl > ds.wavelengths.back()))
      throw LoadError("wavelengths not strictly increasing", 1, col);
    ds.wavelengths.push_back(*wl);
  }

  const auto n = static_cast<Eigen::Index>(table.rows.size());
  const auto m = static_cast<Eigen::Index>(ds.wavelengths.size());
  ds.absorbance.resize(n, m);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& cells = table.rows[static_cast<size_t>(r)];
    const int line = table.line_numbers[static_cast<size_t>(r)];
    if (cells.size() != table.header.size())
      throw LoadError("ragged row: " + std::to_string(cells.size()) + " cells, expected " +
                          std::to_string(table.header.size()),
                      line, static_cast<int>(std::min(cells.size(), table.header.size())) + 1);
    if (has_ids) {
      if (cells[0].empty()) throw LoadError("blank sample_id", line, 1);
      ds.sample_ids.push_back(cells[0]);
    } else {
      ds.sample_ids.push_back(std::to_string(r));
    }
    for (Eigen::Index c = 0; c < m; ++c) {
      const size_t cell = first + static_cast<size_t>(c);
      ds.absorbance(r, c) = parse_cell(cells[cell], line, static_cast<int>(cell) + 1);
    }
  }
  {
    std::set<std::string> seen;
    for (size_t r = 0; r < ds.sample_ids.size(); ++r)
      if (!seen.insert(ds.sample_ids[r]).second)
        throw LoadError("duplicate sample_id '" + ds.sample_ids[r] + "'", table.line_numbers[r], 1);
  }

  ds.properties.resize(0, 0);
  if (properties_path) {
    const CsvTable props = read_table(*properties_path);
    const bool prop_ids = !props.header.empty() && props.header.front() == "sample_id";
    const size_t pfirst = prop_ids ? 1 : 0;
    for (size_t c = pfirst; c < props.header.size(); ++c) {
      if (props.header[c].empty()) throw LoadError("blank property name", 1, static_cast<int>(c) + 1);
      ds.property_names.push_back(props.header[c]);
    }
    if (static_cast<Eigen::Index>(props.rows.size()) != n)
      throw LoadError("property file has " + std::to_string(props.rows.size()) + " rows but spectra file has " +
                          std::to_string(n),
                      props.line_numbers.empty() ? 1 : props.line_numbers.back(), 0);
    const auto p = static_cast<Eigen::Index>(ds.property_names.size());
    ds.properties.resize(n, p);
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto& cells = props.rows[static_cast<size_t>(r)];
      const int line = props.line_numbers[static_cast<size_t>(r)];
      if (cells.size() != props.header.size())
        throw LoadError("ragged property row", line,
                        static_cast<int>(std::min(cells.size(), props.header.size())) + 1);
      if (prop_ids && cells[0] != ds.sample_ids[static_cast<size_t>(r)])
        throw LoadError("property sample_id '" + cells[0] + "' does not match spectra row", line, 1);
      for (Eigen::Index c = 0; c < p; ++c) {
        const size_t cell = pfirst + static_cast<size_t>(c);
        ds.properties(r, c) = parse_cell(cells[cell], line, static_cast<int>(cell) + 1);
      }
    }
  }
  ds.validate();
  return ds;
}

void write_csv(const SpectralDataset& dataset, const std::filesystem::path& spectra_path,
               const std::optional<std::filesystem::path>& properties_path) {
  dataset.validate();
  {
    std::ofstream out(spectra_path, std::ios::binary);
    if (!out) throw Error("dataset", "cannot write " + spectra_path.string());
    out << "sample_id";
    for (double wl : dataset.wavelengths) out << ',' << textio::format_double(wl);
    out << '\n';
    for (int r = 0; r < dataset.n_samples(); ++r) {
      out << dataset.sample_ids[static_cast<size_t>(r)];
      for (int c = 0; c < dataset.n_wavelengths(); ++c) out << ',' << textio::format_double(dataset.absorbance(r, c));
      out << '\n';
    }
  }
  if (properties_path) {
    std::ofstream out(*properties_path, std::ios::binary);
    if (!out) throw Error("dataset", "cannot write " + properties_path->string());
    out << "sample_id";
    for (const auto& name : dataset.property_names) out << ',' << name;
    out << '\n';
    for (int r = 0; r < dataset.n_samples(); ++r) {
      out << dataset.sample_ids[static_cast<size_t>(r)];
      for (Eigen::Index c = 0; c < dataset.properties.cols(); ++c)
        out << ',' << textio::format_double(dataset.properties(r, c));
      out << '\n';
    }
  }
}

SpectralDataset concatenate(std::span<const SpectralDataset> parts) {
  if (parts.empty()) throw Error("dataset", "nothing to concatenate");
  SpectralDataset out;
  out.instrument_id = parts.front().instrument_id;
  out.wavelengths = parts.front().wavelengths;
  out.property_names = parts.front().property_names;
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.wavelengths != out.wavelengths) throw Error("dataset", "wavelength axes differ between parts");
    if (p.property_names != out.property_names) throw Error("dataset", "property names differ between parts");
    rows += p.absorbance.rows();
  }
  out.absorbance.resize(rows, static_cast<Eigen::Index>(out.wavelengths.size()));
  out.properties.resize(out.property_names.empty() ? 0 : rows, static_cast<Eigen::Index>(out.property_names.size()));
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.absorbance.middleRows(at, p.absorbance.rows()) = p.absorbance;
    if (!out.property_names.empty()) out.properties.middleRows(at, p.properties.rows()) = p.properties;
    out.sample_ids.insert(out.sample_ids.end(), p.sample_ids.begin(), p.sample_ids.end());
    at += p.absorbance.rows();
  }
  out.validate();
  return out;
}

std::vector<int> kennard_stone_select(const Eigen::MatrixXd& x, int k) {
  const int n = static_cast<int>(x.rows());
  if (k < 2 || k > n)
    throw Error("dataset", "kennard_stone k=" + std::to_string(k) + " outside [2, " + std::to_string(n) + "]");

  Eigen::MatrixXd dist(n, n);
  for (int i = 0; i < n; ++i) {
    dist(i, i) = 0.0;
    for (int j = i + 1; j < n; ++j) dist(i, j) = dist(j, i) = (x.row(i) - x.row(j)).norm();
  }

  int first = 0, second = 1;
  double best = -1.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (dist(i, j) > best) {
        best = dist(i, j);
        first = i;
        second = j;
      }

  std::vector<int> selected{first, second};
  std::vector<char> taken(static_cast<size_t>(n), 0);
  taken[static_cast<size_t>(first)] = taken[static_cast<size_t>(second)] = 1;
  Eigen::VectorXd min_dist = dist.col(first).cwiseMin(dist.col(second));

  while (static_cast<int>(selected.size()) < k) {
    int pick = -1;
    double pick_dist = -1.0;
    for (int i = 0; i < n; ++i) {
      if (taken[static_cast<size_t>(i)]) continue;
      if (min_dist(i) > pick_dist) {
        pick_dist = min_dist(i);
        pick = i;
      }
    }
    selected.push_back(pick);
    taken[static_cast<size_t>(pick)] = 1;
    min_dist = min_dist.cwiseMin(dist.col(pick));
  }
  return selected;
}

std::vector<int> kennard_stone_select(const SpectralDataset& dataset, int k) {
  return kennard_stone_select(dataset.absorbance, k);
}

std::vector<int> subsample_stride(std::span<const int> indices, int stride) {
  if (stride < 1) throw Error("dataset", "stride must be >= 1");
  std::vector<int> out;
  for (size_t i = 0; i < indices.size(); i += static_cast<size_t>(stride)) out.push_back(indices[i]);
  return out;
}

std::pair<Eigen::MatrixXd, Eigen::RowVectorXd> mean_center(const Eigen::MatrixXd& x) {
  if (x.rows() < 1) throw Error("dataset", "mean_center needs at least one row");
  Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - mean;
  return {std::move(centered), std::move(mean)};
}

std::vector<int> read_index_file(const std::filesystem::path& path) {
  std::vector<int> out;
  const auto lines = textio::read_lines(path.string());
  for (size_t l = 0; l < lines.size(); ++l) {
    std::string token;
    std::string line = lines[l];
    for (char& ch : line)
      if (ch == ',' || ch == '\t') ch = ' ';
    size_t pos = 0;
    while (pos < line.size()) {
      while (pos < line.size() && line[pos] == ' ') ++pos;
      size_t end = line.find(' ', pos);
      if (end == std::string::npos) end = line.size();
      if (end > pos) {
        token = line.substr(pos, end - pos);
        try {
          size_t used = 0;
          int v = std::stoi(token, &used);
          if (used != token.size()) throw std::invalid_argument(token);
          out.push_back(v);
        } catch (const std::exception&) {
          throw LoadError("bad index '" + token + "'", static_cast<int>(l) + 1, 0);
        }
      }
      pos = end;
    }
  }
  return out;
}

}  // namespace calxfer
