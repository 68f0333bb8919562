#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "tonelli/errors.hpp"
#include "tonelli/flow.hpp"
#include "tonelli/model.hpp"

namespace tonelli {

struct ShootOptions {
  FlowOptions flow{};
  int max_iter = 50;
  double tol = 1e-11;              ///< endpoint residual
  double degeneracy_ratio = 1e-8;  ///< sigma_min(dq/dv0) must exceed this times its norm
  double energy_tol = 1e-12;       ///< free-time: |E - k|
};

/// Euler-Lagrange arc from q0 to the lift q1 of the target point in time tau.
struct SegmentSolution {
  Vec2 q0 = Vec2::Zero();  ///< start (as given)
  Vec2 q1 = Vec2::Zero();  ///< end, lifted: q0 + shortest displacement
  double tau = 0.0;
  Vec2 nu_minus = Vec2::Zero();
  Vec2 nu_plus = Vec2::Zero();
  double action = 0.0;
  double length = 0.0;
  double energy = 0.0;  ///< E(q0, nu_minus), constant along the arc
  Mat4 propagator = Mat4::Identity();
  Vec2 end_acceleration = Vec2::Zero();
  double endpoint_error = 0.0;
  int iterations = 0;

  Mat2 A() const { return propagator.block<2, 2>(0, 0); }
  Mat2 B() const { return propagator.block<2, 2>(0, 2); }
  Mat2 C() const { return propagator.block<2, 2>(2, 0); }
  Mat2 D() const { return propagator.block<2, 2>(2, 2); }
};

/// Partial derivatives of the boundary velocities nu^- (at q0) and nu^+ (at q1) with respect
/// to (q0, q1, tau), from the blocks of the segment propagator.
struct BoundaryDerivatives {
  Mat2 minus_q0, minus_q1;
  Vec2 minus_tau;
  Mat2 plus_q0, plus_q1;
  Vec2 plus_tau;
};

inline BoundaryDerivatives boundary_derivatives(const SegmentSolution& s) {
  const Mat2 binv = s.B().inverse();
  BoundaryDerivatives d;
  d.minus_q0 = -binv * s.A();
  d.minus_q1 = binv;
  d.minus_tau = -binv * s.nu_plus;
  d.plus_q0 = s.C() + s.D() * d.minus_q0;
  d.plus_q1 = s.D() * binv;
  d.plus_tau = s.end_acceleration + s.D() * d.minus_tau;
  return d;
}

namespace detail {

inline bool nondegenerate(const Mat2& b, double ratio) {
  Eigen::JacobiSVD<Mat2> svd(b);
  const auto sv = svd.singularValues();
  return sv[1] > ratio * sv[0];
}

}  // namespace detail

/// Damped Newton on v0 -> pi(phi^tau(q0, v0)) starting from the straight-line velocity.
inline SegmentSolution fixed_time_minimizer(const LagrangianModel& model, const Vec2& q0,
                                            const Vec2& q1, double tau, const ShootOptions& opts = {},
                                            std::optional<Vec2> guess = std::nullopt) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw Error(ErrorKind::InvalidArgument, "segment time must be positive");
  const Vec2 d = model.torus().displacement(q0, q1);
  const Vec2 target = q0 + d;
  Vec2 v = guess ? *guess : Vec2(d / tau);
  ArcResult arc = flow_arc(model, q0, v, tau, opts.flow);
  Vec2 r = target - arc.end.q;
  int it = 0;
  for (; it < opts.max_iter && r.norm() > opts.tol; ++it) {
    const Mat2 b = arc.propagator.block<2, 2>(0, 2);
    if (!detail::nondegenerate(b, 1e-14)) throw Error(ErrorKind::NonConvergence, "shooting Jacobian is singular");
    const Vec2 step = b.lu().solve(r);
    double alpha = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 30; ++ls, alpha *= 0.5) {
      try {
        ArcResult trial = flow_arc(model, q0, v + alpha * step, tau, opts.flow);
        const Vec2 rt = target - trial.end.q;
        if (rt.norm() <= (1.0 - 1e-4 * alpha) * r.norm()) {
          v += alpha * step;
          arc = std::move(trial);
          r = rt;
          accepted = true;
          break;
        }
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::StepFailure) throw;
      }
    }
    if (!accepted) throw Error(ErrorKind::NonConvergence, "shooting line search failed");
  }
  if (r.norm() > opts.tol) throw Error(ErrorKind::NonConvergence, "shooting did not reach the endpoint");
  const Mat2 b = arc.propagator.block<2, 2>(0, 2);
  if (!detail::nondegenerate(b, opts.degeneracy_ratio)) {
    throw Error(ErrorKind::Degenerate, "boundary Jacobi problem has a nontrivial kernel");
  }
  SegmentSolution s;
  s.q0 = q0;
  s.q1 = target;
  s.tau = tau;
  s.nu_minus = v;
  s.nu_plus = arc.end.v;
  s.action = arc.action;
  s.length = arc.length;
  const Jet j0 = model.jet(q0, v);
  s.energy = energy(j0, v);
  detail::check_drift(s.energy, energy(model.jet(arc.end.q, arc.end.v), arc.end.v), tau, opts.flow);
  s.propagator = arc.propagator;
  s.end_acceleration = arc.end_acceleration;
  s.endpoint_error = r.norm();
  s.iterations = it;
  return s;
}

/// Speed s with E(q, s u) = k for a unit direction u (E increases along rays).
inline double speed_at_energy(const LagrangianModel& model, const Vec2& q, const Vec2& u, double k) {
  double lo = 0.0, hi = 1.0;
  while (energy(model, {q, hi * u}) < k) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e9) throw Error(ErrorKind::NonConvergence, "energy level unbounded");
  }
  for (int it = 0; it < 100 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (energy(model, {q, mid * u}) < k ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Arc with energy k joining q0 and q1: Newton on tau -> E(q0, nu^-(q0, q1, tau)) - k.
inline SegmentSolution free_time_minimizer(const LagrangianModel& model, double k, const Vec2& q0,
                                           const Vec2& q1, const ShootOptions& opts = {}) {
  if (energy(model, {q0, Vec2::Zero()}) >= k) {
    throw Error(ErrorKind::BelowE0, "E(q0, 0) >= k: no free-time arc leaves q0 at this energy");
  }
  const Vec2 d = model.torus().displacement(q0, q1);
  if (d.norm() == 0.0) {
    SegmentSolution s;
    s.q0 = s.q1 = q0;
    s.energy = k;
    return s;
  }
  double tau = d.norm() / speed_at_energy(model, q0, d.normalized(), k);
  SegmentSolution seg = fixed_time_minimizer(model, q0, q1, tau, opts);
  for (int it = 0; it < opts.max_iter; ++it) {
    const double f = seg.energy - k;
    if (std::abs(f) <= opts.energy_tol * std::max(1.0, std::abs(k))) return seg;
    const Jet j = model.jet(q0, seg.nu_minus);
    const double df = energy_gradients(j, seg.nu_minus).Ev.dot(boundary_derivatives(seg).minus_tau);
    double next = tau - f / df;
    if (!(next > 0.0) || !std::isfinite(next)) next = 0.5 * tau;
    next = std::clamp(next, 0.25 * tau, 4.0 * tau);
    tau = next;
    seg = fixed_time_minimizer(model, q0, q1, tau, opts, seg.nu_minus * (seg.tau / tau));
  }
  throw Error(ErrorKind::NonConvergence, "free-time shooting did not reach the energy level");
}

// ---------------------------------------------------------------------------
// Fields along a segment.

struct SegmentField {
  std::vector<double> t;
  std::vector<Vec2> value;
  std::vector<Vec2> derivative;
};

inline std::vector<double> uniform_times(double tau, int n) {
  std::vector<double> t(n);
  for (int i = 0; i < n; ++i) t[i] = tau * i / (n - 1);
  return t;
}

/// Jacobi field theta with theta(0) = v0, theta(tau) = v1.
inline SegmentField boundary_jacobi_field(const LagrangianModel& model, const SegmentSolution& seg,
                                          const Vec2& v0, const Vec2& v1, int n_samples = 65,
                                          const FlowOptions& flow = {}) {
  if (!detail::nondegenerate(seg.B(), 1e-8)) throw Error(ErrorKind::Degenerate, "degenerate segment");
  const Vec2 dv0 = seg.B().lu().solve(v1 - seg.A() * v0);
  Vec4 x0;
  x0 << v0, dv0;
  SegmentField f;
  for (const auto& s : sample_arc(model, seg.q0, seg.nu_minus, uniform_times(seg.tau, n_samples), flow)) {
    const Vec4 x = s.propagator * x0;
    f.t.push_back(s.t);
    f.value.push_back(x.head<2>());
    f.derivative.push_back(x.tail<2>());
  }
  return f;
}

/// psi = d_tau gamma + gammadot t / tau; vanishes at both ends.
inline SegmentField psi_field(const LagrangianModel& model, const SegmentSolution& seg, int n_samples = 65,
                              const FlowOptions& flow = {}) {
  if (!detail::nondegenerate(seg.B(), 1e-8)) throw Error(ErrorKind::Degenerate, "degenerate segment");
  const Vec2 dnu = boundary_derivatives(seg).minus_tau;
  Vec4 x0;
  x0 << Vec2::Zero(), dnu;
  SegmentField f;
  for (const auto& s : sample_arc(model, seg.q0, seg.nu_minus, uniform_times(seg.tau, n_samples), flow)) {
    const Vec4 x = s.propagator * x0;
    f.t.push_back(s.t);
    f.value.push_back(x.head<2>() + s.state.v * (s.t / seg.tau));
    f.derivative.push_back(x.tail<2>() + s.acceleration * (s.t / seg.tau) + s.state.v / seg.tau);
  }
  return f;
}

// ---------------------------------------------------------------------------

struct InjectivityScales {
  double rho_inj = 0.0;
  double tau_inj = 0.0;
  double epsilon = 0.0;
  int samples = 0;
};

/// Symmetric matrix d p(tau) / d q(tau) for arcs leaving q0 fixed; positive definite when the
/// arc carries no conjugate point that makes it a saddle of the fixed-end action.
inline Mat2 terminal_momentum_hessian(const LagrangianModel& model, const SegmentSolution& s) {
  const Jet j = model.jet(s.q1, s.nu_plus);
  const Mat2 binv = s.B().inverse();
  const Mat2 p = (j.Lvq * s.B() + j.Lvv * s.D()) * binv;
  return 0.5 * (p + p.transpose());
}

struct ScaleOptions {
  int samples = 200;
  double shrink = 0.8;
  double tau_start = 2.0;
  double floor = 1e-4;
  unsigned seed = 12345;
  ShootOptions shoot{};
};

/// Sampled certification of the shooting scales: the largest (rho, tau) on a shrinking grid for
/// which every sampled problem converges to a non-degenerate, locally minimizing arc.
inline InjectivityScales estimate_scales(const LagrangianModel& model, double k, const ScaleOptions& opts = {}) {
  (void)k;
  const auto& torus = model.torus();
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  auto certify = [&](double rho, double tau_max) {
    for (int i = 0; i < opts.samples; ++i) {
      const Vec2 q0(u01(rng) * torus.side(0), u01(rng) * torus.side(1));
      const double r = rho * u01(rng);
      const double ang = 2.0 * M_PI * u01(rng);
      const Vec2 q1 = torus.wrap(q0 + r * Vec2(std::cos(ang), std::sin(ang)));
      const double tau = tau_max * (0.05 + 0.95 * u01(rng));
      try {
        const auto seg = fixed_time_minimizer(model, q0, q1, tau, opts.shoot);
        Eigen::SelfAdjointEigenSolver<Mat2> es(terminal_momentum_hessian(model, seg));
        if (!(es.eigenvalues()[0] > 0.0)) return false;
      } catch (const Error&) {
        return false;
      }
    }
    return true;
  };

  for (double rho = 0.45 * torus.min_side(); rho >= opts.floor; rho *= opts.shrink) {
    for (double tau = opts.tau_start; tau >= opts.floor; tau *= opts.shrink) {
      if (certify(rho, tau)) return {rho, tau, tau, opts.samples};
    }
  }
  throw Error(ErrorKind::ScaleNotFound, "no certified shooting scale above the floor");
}

}  // namespace tonelli
