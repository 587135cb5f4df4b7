#include "calxfer/moebius.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "calxfer/error.hpp"

namespace calxfer {

MoebiusMap MoebiusMap::normalized() const {
  const cplx det = determinant();
  const double scale = std::max({std::abs(a), std::abs(b), std::abs(c), std::abs(d)});
  if (scale == 0.0 || std::abs(det) <= 1e-12 * scale * scale)
    throw SingularityError("moebius", "singular Moebius map (ad - bc = 0)");
  const cplx s = 1.0 / std::sqrt(det);
  return {a * s, b * s, c * s, d * s};
}

cplx moebius_apply(const MoebiusMap& map, cplx z, double tolerance) {
  const cplx den = map.c * z + map.d;
  if (std::abs(den) <= tolerance) throw SingularityError("moebius", "evaluation at the pole of a Moebius map");
  return (map.a * z + map.b) / den;
}

MoebiusMap moebius_inverse(const MoebiusMap& map) {
  MoebiusMap inv{map.d, -map.b, -map.c, map.a};
  return inv.normalized();
}

MoebiusMap moebius_compose(const MoebiusMap& outer, const MoebiusMap& inner) {
  MoebiusMap out{outer.a * inner.a + outer.b * inner.c, outer.a * inner.b + outer.b * inner.d,
                 outer.c * inner.a + outer.d * inner.c, outer.c * inner.b + outer.d * inner.d};
  return out.normalized();
}

double AffineBlend::dilatation() const {
  const double aw = std::abs(w), az = std::abs(z);
  if (!(aw > az)) return std::numeric_limits<double>::infinity();
  return (aw + az) / (aw - az);
}

void check_quad(const Quad& points) {
  const cplx centroid = (points[0] + points[1] + points[2] + points[3]) / 4.0;
  double scale = 0.0;
  for (const auto& p : points) {
    if (!std::isfinite(p.real()) || !std::isfinite(p.imag())) throw DegenerateQuadError("non-finite quad vertex");
    scale = std::max(scale, std::abs(p - centroid));
  }
  if (scale == 0.0) throw DegenerateQuadError("all quad vertices coincide");
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      if (std::abs(points[i] - points[j]) <= kQuadTolerance * scale)
        throw DegenerateQuadError("coincident quad vertices");
  double max_area = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) {
        if (i == j || j == k || i == k) continue;
        const cplx u = points[j] - points[i], v = points[k] - points[i];
        max_area = std::max(max_area, std::abs(u.real() * v.imag() - u.imag() * v.real()));
      }
  if (max_area <= kQuadTolerance * scale * scale) throw DegenerateQuadError("collinear quad");
}

CcwOrder ccw_sort(const Quad& points) {
  check_quad(points);
  const cplx centroid = (points[0] + points[1] + points[2] + points[3]) / 4.0;
  std::array<double, 4> angle{}, radius{};
  for (int k = 0; k < 4; ++k) {
    const cplx rel = points[k] - centroid;
    double a = std::atan2(rel.imag(), rel.real());
    if (a < 0.0) a += 2.0 * M_PI;
    angle[k] = a;
    radius[k] = std::abs(rel);
  }
  CcwOrder out;
  std::iota(out.permutation.begin(), out.permutation.end(), 0);
  std::stable_sort(out.permutation.begin(), out.permutation.end(), [&](int l, int r) {
    if (angle[l] != angle[r]) return angle[l] < angle[r];
    return radius[l] < radius[r];
  });
  for (int k = 0; k < 4; ++k) out.points[k] = points[out.permutation[k]];
  return out;
}

namespace detail {

std::array<int, 2> null_space_ranks(const Eigen::VectorXd& singular_values) {
  if (singular_values.size() != 6) throw Error("moebius", "expected six singular values");
  std::array<int, 6> order{};
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int l, int r) { return singular_values(l) > singular_values(r); });
  // 5th and 6th largest.
  return {order[4], order[5]};
}

std::vector<std::array<cplx, 2>> homogeneous_quadratic_roots(cplx a, cplx b, cplx c) {
  const double scale = std::max({std::abs(a), std::abs(b), std::abs(c)});
  if (scale <= 1e-14) return {};
  a /= scale;
  b /= scale;
  c /= scale;

  // Solve in the better-conditioned chart: lead = coefficient of the free
  // variable squared, tail = constant term.
  const bool mu_chart = std::abs(a) >= std::abs(c);
  const cplx lead = mu_chart ? a : c;
  const cplx tail = mu_chart ? c : a;

  std::vector<cplx> ratios;
  std::vector<bool> at_infinity;
  if (std::abs(lead) <= 1e-14) {
    // Both squares vanish: b * mu * nu = 0.
    ratios = {0.0};
    at_infinity = {false};
    ratios.push_back(0.0);
    at_infinity.push_back(true);
  } else {
    const cplx disc = std::sqrt(b * b - 4.0 * lead * tail);
    const cplx q1 = -(b + disc) / 2.0, q2 = -(b - disc) / 2.0;
    const cplx q = std::abs(q1) >= std::abs(q2) ? q1 : q2;
    if (std::abs(q) == 0.0) {
      ratios = {0.0, 0.0};
    } else {
      ratios = {q / lead, tail / q};
    }
    at_infinity = {false, false};
  }

  std::vector<std::array<cplx, 2>> roots;
  for (size_t k = 0; k < ratios.size(); ++k) {
    std::array<cplx, 2> r;
    if (at_infinity[k]) {
      r = mu_chart ? std::array<cplx, 2>{1.0, 0.0} : std::array<cplx, 2>{0.0, 1.0};
    } else {
      r = mu_chart ? std::array<cplx, 2>{ratios[k], 1.0} : std::array<cplx, 2>{1.0, ratios[k]};
    }
    const double n = std::hypot(std::abs(r[0]), std::abs(r[1]));
    roots.push_back({r[0] / n, r[1] / n});
  }
  return roots;
}

}  // namespace detail

std::vector<ParallelogramNormalizer> parallelogram_normalizers(const Quad& quad) {
  check_quad(quad);
  const cplx centroid = (quad[0] + quad[1] + quad[2] + quad[3]) / 4.0;
  double scale = 0.0;
  for (const auto& p : quad) scale = std::max(scale, std::abs(p - centroid));
  Quad u;
  for (int k = 0; k < 4; ++k) u[k] = (quad[k] - centroid) / scale;

  // Unknowns x = (a, b, c, d, e, f) with e = t c, f = t d, for the map
  // m(z) = (a z + b) / (c z + d) taking u to (0, 1, 1 + t, t).
  Eigen::MatrixXcd system = Eigen::MatrixXcd::Zero(6, 6);
  system.row(0) << u[0], 1.0, 0.0, 0.0, 0.0, 0.0;
  system.row(1) << u[1], 1.0, -u[1], -1.0, 0.0, 0.0;
  system.row(2) << u[2], 1.0, -u[2], -1.0, -u[2], -1.0;
  system.row(3) << u[3], 1.0, 0.0, 0.0, -u[3], -1.0;

  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(system, Eigen::ComputeFullV);
  const Eigen::VectorXd sv = svd.singularValues();
  const auto ranks = detail::null_space_ranks(sv);
  // A third null direction means the four rows are dependent.
  std::vector<double> sorted(sv.data(), sv.data() + sv.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  if (sorted[3] <= 1e-10 * sorted[0]) return {};

  const Eigen::VectorXcd v1 = svd.matrixV().col(ranks[0]);
  const Eigen::VectorXcd v2 = svd.matrixV().col(ranks[1]);
  const cplx qa = v1(4) * v1(3) - v1(5) * v1(2);
  const cplx qb = v1(4) * v2(3) + v2(4) * v1(3) - v1(5) * v2(2) - v2(5) * v1(2);
  const cplx qc = v2(4) * v2(3) - v2(5) * v2(2);

  const MoebiusMap pre{1.0 / scale, -centroid / scale, 0.0, 1.0};
  std::vector<ParallelogramNormalizer> out;
  for (const auto& root : detail::homogeneous_quadratic_roots(qa, qb, qc)) {
    const Eigen::VectorXcd x = root[0] * v1 + root[1] * v2;
    const cplx a = x(0), b = x(1), c = x(2), d = x(3), e = x(4), f = x(5);
    if (std::max(std::abs(c), std::abs(d)) <= 1e-12) continue;
    const cplx t = std::abs(c) >= std::abs(d) ? e / c : f / d;
    if (std::abs(1.0 + t) <= 1e-12 || std::abs(1.0 - t) <= 1e-12) continue;

    // S(w) = sigma w + 1 sends 0 -> 1 and 1 + t -> -1.
    const cplx sigma = -2.0 / (1.0 + t);
    const MoebiusMap local{sigma * a + c, sigma * b + d, c, d};
    MoebiusMap full;
    try {
      full = moebius_compose(local, pre);
    } catch (const SingularityError&) {
      continue;
    }
    const cplx q = (t - 1.0) / (t + 1.0);

    bool ok = true;
    const Quad expected{1.0, q, -1.0, -q};
    for (int k = 0; k < 4 && ok; ++k) {
      try {
        const cplx img = moebius_apply(full, quad[k]);
        ok = std::abs(img - expected[k]) <= 1e-7 * (1.0 + std::abs(q));
      } catch (const SingularityError&) {
        ok = false;
      }
    }
    if (ok && std::abs(q.imag()) > 1e-12 * (1.0 + std::abs(q))) out.push_back({full, q});
  }
  return out;
}

AffineBlend parallelogram_blend(cplx q, cplx r) {
  const cplx den = q - std::conj(q);
  if (std::abs(den) <= 1e-14) throw DegenerateQuadError("flat source parallelogram");
  return {(r - std::conj(q)) / den, (q - r) / den, 0.0};
}

FpiMap fpi_fit(const Quad& source, const Quad& target) {
  check_quad(source);
  check_quad(target);
  const auto src = parallelogram_normalizers(source);
  const auto tgt = parallelogram_normalizers(target);
  if (src.empty() || tgt.empty()) throw Error("moebius", "no parallelogram normal form for quad");

  const ParallelogramNormalizer* best_src = nullptr;
  const ParallelogramNormalizer* best_tgt = nullptr;
  AffineBlend best_blend;
  double best_k = std::numeric_limits<double>::infinity();
  for (const auto& s : src)
    for (const auto& t : tgt) {
      const AffineBlend blend = parallelogram_blend(s.q, t.q);
      const double k = blend.dilatation();
      if (k < best_k) {
        best_k = k;
        best_src = &s;
        best_tgt = &t;
        best_blend = blend;
      }
    }
  if (!best_src) throw Error("moebius", "no orientation-preserving affine blend between quads");

  return {best_src->map, moebius_inverse(best_tgt->map), best_blend};
}

cplx fpi_apply(const FpiMap& map, cplx z) {
  const cplx zeta = moebius_apply(map.forward, z, 1e-12);
  return moebius_apply(map.backward, map.blend.apply(zeta));
}

}  // namespace calxfer
