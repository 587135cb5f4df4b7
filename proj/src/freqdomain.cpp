#include "calxfer/freqdomain.hpp"

#include <fftw3.h>

#include <fstream>
#include <map>
#include <memory>
#include <mutex>

#include "calxfer/error.hpp"
#include "calxfer/textio.hpp"

namespace calxfer {

namespace {

// FFTW planning is not thread safe; plans are created once per
// (size, direction) under a lock and then executed with the new-array
// interface, which is.
class PlanCache {
 public:
  fftw_plan get(int n, int sign) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto key = std::make_pair(n, sign);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    std::vector<fftw_complex> in(static_cast<size_t>(n)), out(static_cast<size_t>(n));
    fftw_plan plan = fftw_plan_dft_1d(n, in.data(), out.data(), sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!plan) throw Error("freqdomain", "FFTW planning failed for size " + std::to_string(n));
    plans_.emplace(key, plan);
    return plan;
  }

  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

 private:
  std::mutex mutex_;
  std::map<std::pair<int, int>, fftw_plan> plans_;
};

PlanCache& plans() {
  static PlanCache cache;
  return cache;
}

void execute(int n, int sign, std::vector<cplx>& in, std::vector<cplx>& out) {
  fftw_plan plan = plans().get(n, sign);
  fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(in.data()), reinterpret_cast<fftw_complex*>(out.data()));
}

}  // namespace

FrequencySet to_frequency(const Eigen::MatrixXd& spectra, std::vector<std::string> sample_ids) {
  const int m = static_cast<int>(spectra.cols());
  const int n = static_cast<int>(spectra.rows());
  if (m < 4) throw Error("freqdomain", "need at least 4 wavelengths, got " + std::to_string(m));
  if (!spectra.allFinite()) throw Error("freqdomain", "non-finite input spectrum");
  if (sample_ids.empty())
    for (int r = 0; r < n; ++r) sample_ids.push_back(std::to_string(r));
  if (static_cast<int>(sample_ids.size()) != n) throw Error("freqdomain", "sample id count mismatch");

  FrequencySet out;
  out.n_wavelengths = m;
  out.sample_ids = std::move(sample_ids);
  out.coefficients.resize(n, bins_for(m));
  std::vector<cplx> in(static_cast<size_t>(m)), spec(static_cast<size_t>(m));
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < m; ++c) in[static_cast<size_t>(c)] = cplx(spectra(r, c), 0.0);
    execute(m, FFTW_FORWARD, in, spec);
    for (int b = 0; b < out.n_bins(); ++b) out.coefficients(r, b) = spec[static_cast<size_t>(b)];
  }
  return out;
}

WavelengthResult to_wavelength(const FrequencySet& freq) {
  const int m = freq.n_wavelengths;
  const int n = freq.n_samples();
  if (m < 4 || freq.n_bins() != bins_for(m)) throw Error("freqdomain", "malformed frequency set");

  WavelengthResult out;
  out.spectra.resize(n, m);
  out.imaginary_residual.resize(n);
  std::vector<cplx> full(static_cast<size_t>(m)), time(static_cast<size_t>(m));
  const double scale = 1.0 / m;
  for (int r = 0; r < n; ++r) {
    for (int b = 0; b < m; ++b) {
      full[static_cast<size_t>(b)] =
          b < freq.n_bins() ? freq.coefficients(r, b) : std::conj(freq.coefficients(r, m - b));
    }
    execute(m, FFTW_BACKWARD, full, time);
    double residual = 0.0;
    for (int c = 0; c < m; ++c) {
      out.spectra(r, c) = time[static_cast<size_t>(c)].real() * scale;
      residual = std::max(residual, std::abs(time[static_cast<size_t>(c)].imag() * scale));
    }
    out.imaginary_residual(r) = residual;
  }
  return out;
}

cplx cayley(cplx z) {
  const cplx i(0.0, 1.0);
  const cplx den = z + i;
  if (std::abs(den) < kCayleyTolerance) throw SingularityError("freqdomain", "cayley transform singular at -i");
  return (z - i) / den;
}

cplx inverse_cayley(cplx w) {
  const cplx i(0.0, 1.0);
  const cplx den = 1.0 - w;
  if (std::abs(den) < kCayleyTolerance)
    throw SingularityError("freqdomain", "inverse cayley transform singular at 1");
  return i * (1.0 + w) / den;
}

void write_frequency_csv(const FrequencySet& freq, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("freqdomain", "cannot write " + path.string());
  out << "bin,sample_id,re,im\n";
  for (int b = 0; b < freq.n_bins(); ++b)
    for (int r = 0; r < freq.n_samples(); ++r) {
      const cplx z = freq.coefficients(r, b);
      out << b << ',' << freq.sample_ids[static_cast<size_t>(r)] << ',' << textio::format_double17(z.real()) << ','
          << textio::format_double17(z.imag()) << '\n';
    }
}

}  // namespace calxfer
