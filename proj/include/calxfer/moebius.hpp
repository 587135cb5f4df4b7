#pragma once

#include <array>
#include <complex>
#include <vector>

#include <Eigen/Dense>

namespace calxfer {

using cplx = std::complex<double>;
using Quad = std::array<cplx, 4>;

/// z -> (a z + b) / (c z + d).
struct MoebiusMap {
  cplx a{1.0}, b{0.0}, c{0.0}, d{1.0};

  static MoebiusMap identity() { return {}; }
  cplx determinant() const { return a * d - b * c; }
  /// Same map scaled to unit determinant. Throws on a singular map.
  MoebiusMap normalized() const;
};

inline constexpr double kPoleTolerance = 1e-14;
inline constexpr double kQuadTolerance = 1e-12;

/// Throws SingularityError when |c z + d| <= tolerance.
cplx moebius_apply(const MoebiusMap& map, cplx z, double tolerance = kPoleTolerance);
MoebiusMap moebius_inverse(const MoebiusMap& map);
/// outer(inner(z)).
MoebiusMap moebius_compose(const MoebiusMap& outer, const MoebiusMap& inner);

/// Real-affine map zeta -> w zeta + z conj(zeta) + l. `w` is the conformal
/// part, `z` the anticonformal part and `l` the translation.
struct AffineBlend {
  cplx w{1.0}, z{0.0}, l{0.0};

  cplx apply(cplx zeta) const { return w * zeta + z * std::conj(zeta) + l; }
  bool orientation_preserving() const { return std::abs(w) > std::abs(z); }
  /// (|w| + |z|) / (|w| - |z|); +inf when not orientation preserving.
  double dilatation() const;
};

/// Four-point interpolant: backward o blend o forward.
struct FpiMap {
  MoebiusMap forward;   // source quad -> normalized source parallelogram
  MoebiusMap backward;  // normalized target parallelogram -> target quad
  AffineBlend blend;

  double dilatation() const { return blend.dilatation(); }
};

struct CcwOrder {
  Quad points;
  std::array<int, 4> permutation;  // points[k] == input[permutation[k]]
};

/// Orders points counter-clockwise by angle about their centroid, angles
/// taken in [0, 2pi); equal angles go nearest-first. Throws
/// DegenerateQuadError on collinear or coincident points.
CcwOrder ccw_sort(const Quad& points);

/// Throws DegenerateQuadError when the quad is collinear or has coincident
/// vertices (relative tolerance kQuadTolerance).
void check_quad(const Quad& points);

/// A Moebius map sending a quad onto the parallelogram (1, q, -1, -q).
struct ParallelogramNormalizer {
  MoebiusMap map;
  cplx q;
};

/// All Moebius maps (at most two) that carry the quad's vertices, in order,
/// to an origin-centred parallelogram with the first vertex at +1.
std::vector<ParallelogramNormalizer> parallelogram_normalizers(const Quad& quad);

/// Affine map of (1, q, -1, -q) onto (1, r, -1, -r) vertex by vertex.
AffineBlend parallelogram_blend(cplx q, cplx r);

/// Fits source -> target; both quads already in corresponding CCW order.
/// Among all normalizer pairings whose blend preserves orientation, picks the
/// one with least dilatation. Throws DegenerateQuadError, or Error when no
/// pairing is admissible.
FpiMap fpi_fit(const Quad& source, const Quad& target);

/// Throws SingularityError within 1e-12 of the forward pole.
cplx fpi_apply(const FpiMap& map, cplx z);

namespace detail {

/// Positions in `singular_values` of the 5th and 6th largest entries
/// (ranked in descending order, storage order ignored). These span the
/// null space of the padded 6x6 parallelogram system.
std::array<int, 2> null_space_ranks(const Eigen::VectorXd& singular_values);

/// Roots (mu : nu) of A mu^2 + B mu nu + C nu^2 = 0, each scaled to unit
/// norm. Empty when the form vanishes identically.
std::vector<std::array<cplx, 2>> homogeneous_quadratic_roots(cplx a, cplx b, cplx c);

}  // namespace detail

}  // namespace calxfer
