#include <doctest.h>

#include <algorithm>
#include <limits>
#include <random>

#include "calxfer/chemometrics.hpp"
#include "calxfer/error.hpp"
#include "test_support.hpp"

using namespace calxfer;
using test_support::random_matrix;

namespace {

// Ordinary least squares with intercept through the normal equations.
Eigen::VectorXd ols_predict(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::MatrixXd& probe) {
  Eigen::MatrixXd a(x.rows(), x.cols() + 1);
  a << Eigen::VectorXd::Ones(x.rows()), x;
  const Eigen::VectorXd beta = (a.transpose() * a).ldlt().solve(a.transpose() * y);
  Eigen::MatrixXd p(probe.rows(), probe.cols() + 1);
  p << Eigen::VectorXd::Ones(probe.rows()), probe;
  return p * beta;
}

double mrmset_loops(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b) {
  double total = 0.0;
  for (int c = 0; c < a.cols(); ++c) {
    double s = 0.0;
    for (int r = 0; r < a.rows(); ++r) {
      const double d = std::abs(a(r, c) - b(r, c));
      s += d * d;
    }
    total += std::sqrt(s / static_cast<double>(a.rows()));
  }
  return total / static_cast<double>(a.cols());
}

}  // namespace

TEST_SUITE("chemometrics") {
  TEST_CASE("PCR recovers a noiseless linear signal of rank r") {
    const Eigen::MatrixXd scores = random_matrix(20, 3, 1);
    const Eigen::MatrixXd x = scores * random_matrix(3, 10, 2);
    const Eigen::VectorXd y = x * random_matrix(10, 1, 3).col(0);
    const PcrModel model = pcr_fit(x, y, 3);
    CHECK((pcr_predict(model, x) - y).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((pcr_predict_scores(model, x) - y).cwiseAbs().maxCoeff() <= 1e-8);
  }

  TEST_CASE("PCR at full rank equals least squares") {
    const Eigen::MatrixXd x = random_matrix(15, 5, 4);
    const Eigen::VectorXd y = random_matrix(15, 1, 5).col(0);
    const PcrModel model = pcr_fit(x, y, 5);
    const Eigen::MatrixXd probe = random_matrix(6, 5, 6);
    CHECK((pcr_predict(model, probe) - ols_predict(x, y, probe)).cwiseAbs().maxCoeff() <= 1e-8);
  }

  TEST_CASE("PCR is invariant to sample order") {
    const Eigen::MatrixXd x = random_matrix(12, 6, 7);
    const Eigen::VectorXd y = random_matrix(12, 1, 8).col(0);
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(12);
    perm.setIdentity();
    std::mt19937 rng(1);
    std::shuffle(perm.indices().data(), perm.indices().data() + 12, rng);
    const PcrModel a = pcr_fit(x, y, 3);
    const PcrModel b = pcr_fit(perm * x, perm * y, 3);
    CHECK((a.coefficients - b.coefficients).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(std::abs(a.y_mean - b.y_mean) <= 1e-12);
  }

  TEST_CASE("training RMSEP is non-increasing in k") {
    const Eigen::MatrixXd x = random_matrix(14, 8, 9);
    const Eigen::VectorXd y = random_matrix(14, 1, 10).col(0);
    double previous = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= 8; ++k) {
      const double e = rmsep(y, pcr_predict(pcr_fit(x, y, k), x));
      CHECK(e <= previous + 1e-12);
      previous = e;
    }
  }

  TEST_CASE("PCR on a constant row predicts by hand") {
    const Eigen::MatrixXd x = random_matrix(10, 4, 11);
    const Eigen::VectorXd y = random_matrix(10, 1, 12).col(0);
    const PcrModel model = pcr_fit(x, y, 2);
    const Eigen::RowVectorXd row = Eigen::RowVectorXd::Constant(4, 0.25);
    const double expected = model.y_mean + (row - model.x_mean).dot(model.coefficients);
    CHECK(pcr_predict(model, row)(0) == doctest::Approx(expected).epsilon(1e-14));
  }

  TEST_CASE("PCR argument checks") {
    const Eigen::MatrixXd x = random_matrix(5, 3, 1);
    const Eigen::VectorXd y = Eigen::VectorXd::Ones(5);
    CHECK_THROWS_AS(pcr_fit(x, y, 0), Error);
    CHECK_THROWS_AS(pcr_fit(x, y, 4), Error);
    CHECK_THROWS_AS(pcr_fit(x, Eigen::VectorXd::Ones(4), 1), Error);
    CHECK_THROWS_AS(pcr_fit(Eigen::MatrixXd::Ones(5, 3), y, 1), Error);
    CHECK_THROWS_AS(pcr_predict(pcr_fit(x, y, 1), random_matrix(2, 2, 1)), Error);
  }

  TEST_CASE("LOO picks the intrinsic rank of a rank-1 signal") {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> g;
    const int n = 40, m = 12;
    Eigen::VectorXd t(n);
    for (int i = 0; i < n; ++i) t(i) = g(rng);
    const Eigen::RowVectorXd p = random_matrix(1, m, 14).row(0);
    Eigen::MatrixXd x = t * p;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) x(i, j) += 1e-6 * g(rng);
    Eigen::VectorXd y = 2.0 * t;
    for (int i = 0; i < n; ++i) y(i) += 1e-2 * g(rng);
    const LooResult r = loo_select_k(x, y, 6);
    CHECK(r.best_k == 1);
    CHECK(r.rmsecv.size() == 6);
  }

  TEST_CASE("LOO matches refitting PCR per fold") {
    const Eigen::MatrixXd x = random_matrix(9, 5, 15);
    const Eigen::VectorXd y = random_matrix(9, 1, 16).col(0);
    const LooResult r = loo_select_k(x, y, 4, 1);
    for (int k = 1; k <= 4; ++k) {
      double sum = 0.0;
      for (int held = 0; held < 9; ++held) {
        Eigen::MatrixXd xt(8, 5);
        Eigen::VectorXd yt(8);
        for (int i = 0, t = 0; i < 9; ++i)
          if (i != held) xt.row(t) = x.row(i), yt(t++) = y(i);
        const double e = y(held) - pcr_predict(pcr_fit(xt, yt, k), x.row(held))(0);
        sum += e * e;
      }
      CHECK(r.rmsecv[static_cast<size_t>(k - 1)] == doctest::Approx(std::sqrt(sum / 9)).epsilon(1e-10));
    }
  }

  TEST_CASE("LOO boundary, order invariance and determinism") {
    const Eigen::MatrixXd x3 = random_matrix(3, 4, 17);
    const LooResult tiny = loo_select_k(x3, Eigen::Vector3d(1, 2, 4), 1);
    CHECK(tiny.rmsecv.size() == 1);
    CHECK(tiny.best_k == 1);
    CHECK_THROWS_AS(loo_select_k(x3, Eigen::Vector3d(1, 2, 4), 2), Error);
    CHECK_THROWS_AS(loo_select_k(x3.topRows(2), Eigen::Vector2d(1, 2), 1), Error);

    const Eigen::MatrixXd x = random_matrix(10, 6, 18);
    const Eigen::VectorXd y = random_matrix(10, 1, 19).col(0);
    Eigen::MatrixXd xd(20, 6);
    Eigen::VectorXd yd(20);
    xd << x, x;
    yd << y, y;
    const LooResult d1 = loo_select_k(xd, yd, 5, 1);
    const LooResult d2 = loo_select_k(xd, yd, 5, 4);
    CHECK(d1.best_k == d2.best_k);
    CHECK(d1.rmsecv == d2.rmsecv);

    Eigen::PermutationMatrix<Eigen::Dynamic> perm(10);
    perm.setIdentity();
    std::reverse(perm.indices().data(), perm.indices().data() + 10);
    const LooResult a = loo_select_k(x, y, 5);
    const LooResult b = loo_select_k(perm * x, perm * y, 5);
    for (size_t k = 0; k < 5; ++k) CHECK(a.rmsecv[k] == doctest::Approx(b.rmsecv[k]).epsilon(1e-12));
  }

  TEST_CASE("MRMSET") {
    const Eigen::MatrixXd a = random_matrix(4, 6, 20);
    CHECK(mrmset(a, a) == 0.0);
    CHECK(mrmset(a, (a.array() + 0.3).matrix()) == doctest::Approx(0.3).epsilon(1e-14));
    CHECK(mrmset(a, (a.array() - 0.3).matrix()) == doctest::Approx(0.3).epsilon(1e-14));
    const Eigen::MatrixXd b = random_matrix(4, 6, 21);
    CHECK(mrmset(a, b) == mrmset(b, a));
    CHECK(mrmset(a, b) > 0.0);

    Eigen::MatrixXcd ca(3, 5), cb(3, 5);
    ca.real() = random_matrix(3, 5, 22);
    ca.imag() = random_matrix(3, 5, 23);
    cb.real() = random_matrix(3, 5, 24);
    cb.imag() = random_matrix(3, 5, 25);
    CHECK(std::abs(mrmset(ca, cb) - mrmset_loops(ca, cb)) <= 1e-12);
    CHECK_THROWS_AS(mrmset(a, b.leftCols(5)), Error);
    CHECK_THROWS_AS(mrmset(Eigen::MatrixXd(0, 0), Eigen::MatrixXd(0, 0)), Error);
  }

  TEST_CASE("RMSEP") {
    const Eigen::VectorXd y = random_matrix(7, 1, 26).col(0);
    CHECK(rmsep(y, y) == 0.0);
    CHECK(rmsep(y, (y.array() + 2.0).matrix()) == doctest::Approx(2.0).epsilon(1e-15));
    const Eigen::VectorXd p = random_matrix(7, 1, 27).col(0);
    double s = 0.0;
    for (int i = 0; i < 7; ++i) s += (y(i) - p(i)) * (y(i) - p(i));
    CHECK(std::abs(rmsep(y, p) - std::sqrt(s / 7)) <= 1e-14);
    CHECK_THROWS_AS(rmsep(y, p.head(6)), Error);
  }

  TEST_CASE("Bland-Altman") {
    const Eigen::VectorXd a = random_matrix(9, 1, 28).col(0);
    const BlandAltman same = bland_altman(a, a);
    CHECK(same.bias == 0.0);
    CHECK(same.lower == 0.0);
    CHECK(same.upper == 0.0);

    const BlandAltman shifted = bland_altman((a.array() + 1.0).matrix(), a);
    CHECK(shifted.bias == doctest::Approx(1.0));
    CHECK(shifted.lower == doctest::Approx(1.0));
    CHECK(shifted.upper == doctest::Approx(1.0));

    Eigen::VectorXd x(4), y(4);
    x << 1, 2, 3, 4;
    y << 0, 0, 0, 0;
    // differences 1..4: mean 2.5, sample sd sqrt(5/3)
    const BlandAltman ba = bland_altman(x, y, 2.0);
    CHECK(std::abs(ba.bias - 2.5) <= 1e-12);
    CHECK(std::abs(ba.upper - (2.5 + 2.0 * std::sqrt(5.0 / 3.0))) <= 1e-12);
    CHECK(std::abs(ba.lower - (2.5 - 2.0 * std::sqrt(5.0 / 3.0))) <= 1e-12);
    CHECK(ba.means(3) == 2.0);
    CHECK(bland_altman(y, x).bias < 0.0);
    CHECK_THROWS_AS(bland_altman(x, y.head(3)), Error);
  }
}
