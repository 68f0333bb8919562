#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <complex>
#include <memory>
#include <string>
#include <vector>

#include "tonelli/action.hpp"
#include "tonelli/errors.hpp"
#include "tonelli/model.hpp"
#include "tonelli/torus.hpp"

namespace tonelli {

// ---------------------------------------------------------------------------
// Harmonic counterexample: two decoupled oscillators with incommensurable
// frequencies 1/r1, 1/r2, flattened to a constant outside a polydisk so that
// the system descends to the torus of side 2R.

/// Clamp profile: identity on [0, a], constant b on [b, inf), C^2 quintic in between.
class ClampProfile {
 public:
  ClampProfile(double a, double b) : a_(a), b_(b) {
    if (!(a > 0.0) || !(b > a)) throw Error(ErrorKind::InvalidArgument, "clamp profile needs 0 < a < b");
  }

  struct Value {
    double f, df, ddf;
  };

  Value operator()(double x) const {
    if (x <= a_) return {x, 1.0, 0.0};
    if (x >= b_) return {b_, 0.0, 0.0};
    const double w = b_ - a_;
    const double s = (x - a_) / w;
    // g(s) = s + 4 s^3 - 7 s^4 + 3 s^5: g(0)=0, g'(0)=1, g(1)=1, g'(1)=g''(0)=g''(1)=0
    const double g = s + s * s * s * (4.0 - 7.0 * s + 3.0 * s * s);
    const double dg = 1.0 + s * s * (12.0 - 28.0 * s + 15.0 * s * s);
    const double ddg = s * (24.0 - 84.0 * s + 60.0 * s * s);
    return {a_ + w * g, dg, ddg / w};
  }

  double inner() const { return a_; }
  double outer() const { return b_; }

 private:
  double a_, b_;
};

struct CounterexampleParams {
  double r1 = 1.0;
  double r2 = std::sqrt(2.0);
  double R = 2.0;

  /// Throws InvalidArgument unless r1 < r2 < R, R > 1 and r1/r2 is not within 1e-9 of p/q, q <= 64.
  void validate() const {
    if (!(r1 > 0.0) || !(r2 > r1)) throw Error(ErrorKind::InvalidArgument, "need 0 < r1 < r2");
    if (!(R > r2)) throw Error(ErrorKind::InvalidArgument, "need R > r2");
    // The potential is constant for q_i^2 >= R; the seam at |q_i| = R is smooth only if R > 1.
    if (!(R > 1.0)) throw Error(ErrorKind::InvalidArgument, "need R > 1 for a smooth seam");
    const double x = r1 / r2;
    for (int q = 1; q <= 64; ++q) {
      const double p = std::round(x * q);
      if (std::abs(x - p / q) < 1e-9) {
        throw Error(ErrorKind::InvalidArgument, "r1/r2 is (numerically) rational");
      }
    }
  }

  ClampProfile chi() const { return ClampProfile(r2, R); }
  TorusConfig torus() const { return TorusConfig(2.0 * R, 2.0 * R); }
};

/// Torus coordinate [0, 2R) to the centered chart [-R, R).
inline Vec2 centered(const CounterexampleParams& p, const Vec2& q) {
  Vec2 out;
  for (int i = 0; i < 2; ++i) {
    double x = std::fmod(q[i] + p.R, 2.0 * p.R);
    if (x < 0.0) x += 2.0 * p.R;
    out[i] = x - p.R;
  }
  return out;
}

namespace detail {

/// L = 1/2 (r1 v1^2 + r2 v2^2) - chi(q1^2) / (2 r1) - chi(q2^2) / (2 r2)
class CounterexampleImpl final : public LagrangianModel::Impl {
 public:
  explicit CounterexampleImpl(const CounterexampleParams& p) : p_(p), chi_(p.chi()) {}

  Jet jet(const Vec2& q, const Vec2& v) const override {
    const Vec2 x = centered(p_, q);
    const double r[2] = {p_.r1, p_.r2};
    Jet j;
    for (int i = 0; i < 2; ++i) {
      const auto c = chi_(x[i] * x[i]);
      j.L += 0.5 * r[i] * v[i] * v[i] - c.f / (2.0 * r[i]);
      j.Lv[i] = r[i] * v[i];
      j.Lvv(i, i) = r[i];
      j.Lq[i] = -x[i] * c.df / r[i];
      j.Lqq(i, i) = -(c.df + 2.0 * x[i] * x[i] * c.ddf) / r[i];
    }
    return j;
  }

 private:
  CounterexampleParams p_;
  ClampProfile chi_;
};

}  // namespace detail

inline LagrangianModel counterexample_model(const CounterexampleParams& p = {}) {
  p.validate();
  return LagrangianModel("counterexample", {{"r1", p.r1}, {"r2", p.r2}, {"R", p.R}}, p.torus(),
                         std::make_shared<detail::CounterexampleImpl>(p));
}

/// Phase point z_j = q_j + i p_j in centered coordinates, p_j = r_j v_j.
using Phase = std::array<std::complex<double>, 2>;

inline Phase to_phase(const CounterexampleParams& p, const TangentState& s) {
  const Vec2 x = centered(p, s.q);
  return {std::complex<double>(x[0], p.r1 * s.v[0]), std::complex<double>(x[1], p.r2 * s.v[1])};
}

inline TangentState from_phase(const CounterexampleParams& p, const Phase& z) {
  TangentState s;
  s.q = p.torus().wrap(Vec2(z[0].real(), z[1].real()));
  s.v = Vec2(z[0].imag() / p.r1, z[1].imag() / p.r2);
  return s;
}

/// Exact flow inside the region where chi is the identity: z_j(t) = exp(-i t / r_j) z_j(0).
inline Phase closed_form_flow(const CounterexampleParams& p, double t, const Phase& z0) {
  const double r[2] = {p.r1, p.r2};
  Phase out;
  for (int j = 0; j < 2; ++j) {
    // |q_j(t)| <= |z_j| on the whole orbit; the quadratic region is q_j^2 < r_j
    if (!(std::norm(z0[j]) < r[j])) {
      throw Error(ErrorKind::LeavesPolydisk, "orbit leaves the quadratic polydisk");
    }
    out[j] = std::polar(1.0, -t / r[j]) * z0[j];
  }
  return out;
}

struct ReferenceOrbit {
  std::string name;
  double period = 0.0;
  int oscillator = 0;  ///< which coordinate oscillates
  double amplitude = 0.0;
  CounterexampleParams params{};

  TangentState state(double t) const {
    Phase z{std::complex<double>(0.0), std::complex<double>(0.0)};
    z[oscillator] = amplitude;
    return from_phase(params, closed_form_flow(params, t, z));
  }
};

/// The only two periodic orbits at energy k in (0, 1/2): oscillation in q1 (period 2 pi r1)
/// and in q2 (period 2 pi r2).
inline std::array<ReferenceOrbit, 2> reference_orbits(const CounterexampleParams& p, double k) {
  if (!(k > 0.0) || !(k < 0.5)) throw Error(ErrorKind::InvalidArgument, "reference orbits need 0 < k < 1/2");
  return {ReferenceOrbit{"Gamma", 2.0 * M_PI * p.r1, 0, std::sqrt(2.0 * p.r1 * k), p},
          ReferenceOrbit{"Psi", 2.0 * M_PI * p.r2, 1, std::sqrt(2.0 * p.r2 * k), p}};
}

inline std::array<int, 2> maslov_indices(const CounterexampleParams& p) {
  return {2 * (static_cast<int>(std::floor(p.r1 / p.r2)) + 1), 2 * (static_cast<int>(std::floor(p.r2 / p.r1)) + 1)};
}

/// Linear flow of the decoupled oscillators over time t in (q1, q2, v1, v2) coordinates.
inline Mat4 exact_linear_flow(const CounterexampleParams& p, double t) {
  Mat4 m = Mat4::Zero();
  const double r[2] = {p.r1, p.r2};
  for (int j = 0; j < 2; ++j) {
    const double w = 1.0 / r[j];
    const double c = std::cos(w * t), s = std::sin(w * t);
    m(j, j) = c;
    m(j, 2 + j) = s / w;
    m(2 + j, j) = -w * s;
    m(2 + j, 2 + j) = c;
  }
  return m;
}

/// Discretization of a reference orbit by h equally spaced samples of the exact solution.
inline DiscreteLoop reference_loop(const ReferenceOrbit& orbit, int h) {
  DiscreteLoop loop;
  loop.tau = orbit.period / h;
  for (int i = 0; i < h; ++i) loop.points.push_back(orbit.state(loop.tau * i).q);
  return loop;
}

// ---------------------------------------------------------------------------
// Exact magnetic fixtures on the torus of side 2 pi.

/// A = (0, s sin q1), V = eps (cos q2 - 1). Field s cos q1 changes sign; eps breaks the
/// translation symmetry in q2. e0 = 0 and the total variation of the field is 8 pi s.
inline LagrangianModel magnetic_strip_fixture(double s, double eps = 0.0) {
  const TorusConfig torus(2.0 * M_PI, 2.0 * M_PI);
  std::vector<TrigTerm> potential;
  if (eps != 0.0) potential = {{eps, 0, 1, 0.0}, {-eps, 0, 0, 0.0}};
  auto m = exact_magnetic_model(torus, {}, {{s, 1, 0, -M_PI / 2.0}}, potential);
  return m.renamed("magnetic_strip", {{"s", s}, {"eps", eps}});
}

/// A = (0, s sin q1 cos q2): field s cos q1 cos q2 with a checkerboard of sign cells.
/// e0 = 0 and the total variation of the field is 16 s.
inline LagrangianModel magnetic_cell_fixture(double s) {
  const TorusConfig torus(2.0 * M_PI, 2.0 * M_PI);
  auto m = exact_magnetic_model(torus, {}, {{0.5 * s, 1, 1, -M_PI / 2.0}, {0.5 * s, 1, -1, -M_PI / 2.0}}, {});
  return m.renamed("magnetic_cell", {{"s", s}});
}

// ---------------------------------------------------------------------------

/// Straight closed geodesic of the kinetic model with winding (a, b), speed sqrt(2k), h points.
inline DiscreteLoop flat_geodesic_loop(const TorusConfig& torus, std::array<int, 2> wind, double k, int h,
                                       Vec2 start = Vec2::Zero()) {
  const Vec2 d(wind[0] * torus.side(0), wind[1] * torus.side(1));
  DiscreteLoop loop;
  loop.tau = d.norm() / std::sqrt(2.0 * k) / h;
  for (int i = 0; i < h; ++i) loop.points.push_back(torus.wrap(start + d * (static_cast<double>(i) / h)));
  return loop;
}

}  // namespace tonelli
