#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "calxfer/error.hpp"
#include "calxfer/freqdomain.hpp"
#include "test_support.hpp"

using namespace calxfer;

namespace {

// Direct O(M^2) DFT of one row.
std::vector<cplx> dft_oracle(const Eigen::RowVectorXd& x) {
  const int m = static_cast<int>(x.size());
  std::vector<cplx> out(static_cast<size_t>(m / 2 + 1));
  for (int k = 0; k <= m / 2; ++k) {
    cplx sum = 0.0;
    for (int t = 0; t < m; ++t) sum += x(t) * std::polar(1.0, -2.0 * std::numbers::pi * k * t / m);
    out[static_cast<size_t>(k)] = sum;
  }
  return out;
}

}  // namespace

TEST_SUITE("freqdomain") {
  TEST_CASE("constant row is DC only") {
    const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(1, 8, 2.5);
    const FrequencySet f = to_frequency(x);
    CHECK(f.n_bins() == 5);
    CHECK(std::abs(f.coefficients(0, 0) - cplx(20.0)) < 1e-12);
    for (int b = 1; b < 5; ++b) CHECK(std::abs(f.coefficients(0, b)) < 1e-12);
  }

  TEST_CASE("cosine lands in its bin with magnitude M/2") {
    Eigen::MatrixXd x(1, 16);
    for (int t = 0; t < 16; ++t) x(0, t) = std::cos(2.0 * std::numbers::pi * 2 * t / 16);
    const FrequencySet f = to_frequency(x);
    for (int b = 0; b < f.n_bins(); ++b) CHECK(std::abs(f.coefficients(0, b)) == doctest::Approx(b == 2 ? 8.0 : 0.0).epsilon(1e-12));
  }

  TEST_CASE("identical rows give identical coefficients; ids default to row index") {
    Eigen::MatrixXd x = test_support::random_matrix(2, 10, 4);
    x.row(1) = x.row(0);
    const FrequencySet f = to_frequency(x);
    CHECK(f.coefficients.row(0) == f.coefficients.row(1));
    CHECK(f.sample_ids == std::vector<std::string>{"0", "1"});
  }

  TEST_CASE("matches a direct DFT for odd and even widths") {
    for (int m : {4, 7, 16, 33}) {
      const Eigen::MatrixXd x = test_support::random_matrix(3, m, static_cast<unsigned>(m));
      const FrequencySet f = to_frequency(x);
      for (int r = 0; r < 3; ++r) {
        const auto expected = dft_oracle(x.row(r));
        for (int b = 0; b < f.n_bins(); ++b) CHECK(std::abs(f.coefficients(r, b) - expected[static_cast<size_t>(b)]) < 1e-10);
      }
    }
  }

  TEST_CASE("round trip within 1e-10 relative") {
    for (int m : {4, 5, 64, 701}) {
      const Eigen::MatrixXd x = test_support::random_matrix(4, m, 9, 0.0, 3.0);
      const WavelengthResult back = to_wavelength(to_frequency(x));
      CHECK((back.spectra - x).cwiseAbs().maxCoeff() <= 1e-10 * x.cwiseAbs().maxCoeff());
      CHECK(back.imaginary_residual.maxCoeff() < 1e-10);
    }
  }

  TEST_CASE("zero coefficients give a zero spectrum") {
    FrequencySet f;
    f.n_wavelengths = 10;
    f.coefficients = Eigen::MatrixXcd::Zero(2, 6);
    const WavelengthResult r = to_wavelength(f);
    CHECK(r.spectra.isZero());
    CHECK(r.imaginary_residual.isZero());
  }

  TEST_CASE("ramp recovered from its coefficients") {
    Eigen::MatrixXd ramp(1, 12);
    for (int t = 0; t < 12; ++t) ramp(0, t) = 0.5 * t - 1.0;
    FrequencySet f;
    f.n_wavelengths = 12;
    f.coefficients.resize(1, 7);
    const auto c = dft_oracle(ramp.row(0));
    for (int b = 0; b < 7; ++b) f.coefficients(0, b) = c[static_cast<size_t>(b)];
    CHECK((to_wavelength(f).spectra - ramp).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("non-Hermitian input reports an imaginary residual") {
    FrequencySet f;
    f.n_wavelengths = 8;
    f.coefficients = Eigen::MatrixXcd::Zero(1, 5);
    f.coefficients(0, 0) = cplx(0.0, 8.0);  // DC must be real
    CHECK(to_wavelength(f).imaginary_residual(0) == doctest::Approx(1.0));
  }

  TEST_CASE("to_frequency argument checks") {
    CHECK_THROWS_AS(to_frequency(Eigen::MatrixXd::Zero(2, 3)), Error);
    Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 8);
    bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(to_frequency(bad), Error);
    FrequencySet f;
    f.n_wavelengths = 8;
    f.coefficients = Eigen::MatrixXcd::Zero(1, 4);
    CHECK_THROWS_AS(to_wavelength(f), Error);
  }

  TEST_CASE("cayley closed forms") {
    const cplx i(0.0, 1.0);
    CHECK(std::abs(cayley(0.0) - cplx(-1.0)) < 1e-15);
    CHECK(std::abs(cayley(i)) < 1e-15);
    CHECK(std::abs(cayley(1.0) + i) < 1e-15);
    CHECK(std::abs(inverse_cayley(-1.0)) < 1e-15);
    CHECK(std::abs(inverse_cayley(0.0) - i) < 1e-15);
    CHECK_THROWS_AS(cayley(-i), SingularityError);
    CHECK_THROWS_AS(inverse_cayley(1.0), SingularityError);
  }

  TEST_CASE("cayley round trip on random points") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    double worst = 0.0;
    int tested = 0;
    while (tested < 1000) {
      const cplx z(u(rng), u(rng));
      if (std::abs(z) > 10.0 || std::abs(z + cplx(0.0, 1.0)) < 1e-3) continue;
      worst = std::max(worst, std::abs(inverse_cayley(cayley(z)) - z));
      ++tested;
    }
    CHECK(worst <= 1e-12);
  }

  TEST_CASE("upper half plane maps into the unit disk") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.01, 5.0);
    for (int k = 0; k < 200; ++k) CHECK(std::abs(cayley(cplx(u(rng) - 2.5, u(rng)))) < 1.0);
  }
}
