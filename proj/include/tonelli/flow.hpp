#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <vector>

#include "tonelli/errors.hpp"
#include "tonelli/model.hpp"

namespace tonelli {

struct FlowOptions {
  double abs_tol = 1e-10;
  double rel_tol = 1e-10;
  /// allowed |E(t) - E(0)| per unit time, relative to max(1, |E(0)|)
  double energy_drift_rate = 1e-8;
  long max_steps = 2'000'000;
  double initial_step = 1e-3;
};

// ---------------------------------------------------------------------------
// Dormand-Prince 5(4) with standard step-size control.

template <int N>
class DormandPrince {
 public:
  using State = Eigen::Matrix<double, N, 1>;

  explicit DormandPrince(FlowOptions opts) : opts_(opts) {}

  /// Advances x from t0 to t1 (t1 >= t0). The observer sees every accepted step.
  template <class Rhs, class Observer>
  void integrate(const Rhs& rhs, State& x, double t0, double t1, Observer&& observe) {
    const double span = t1 - t0;
    if (span <= 0.0) return;
    double t = t0;
    double h = std::min(step_hint_ > 0.0 ? step_hint_ : opts_.initial_step, span);
    State k1 = rhs(x);
    long steps = 0;
    while (t < t1) {
      if (++steps > opts_.max_steps) throw Error(ErrorKind::StepFailure, "too many integration steps");
      bool last = false;
      if (t + h >= t1) {
        h = t1 - t;
        last = true;
      }
      const State k2 = rhs(x + h * (a21 * k1));
      const State k3 = rhs(x + h * (a31 * k1 + a32 * k2));
      const State k4 = rhs(x + h * (a41 * k1 + a42 * k2 + a43 * k3));
      const State k5 = rhs(x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
      const State k6 = rhs(x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
      const State x5 = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
      const State k7 = rhs(x5);
      const State err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
      double en = 0.0;
      for (int i = 0; i < x.size(); ++i) {
        const double sc = opts_.abs_tol + opts_.rel_tol * std::max(std::abs(x[i]), std::abs(x5[i]));
        en = std::max(en, std::abs(err[i]) / sc);
      }
      if (!std::isfinite(en)) {
        h *= 0.25;
        if (h < 1e-14 * std::max(1.0, std::abs(t))) throw Error(ErrorKind::StepFailure, "non-finite state");
        continue;
      }
      if (en <= 1.0) {
        t = last ? t1 : t + h;
        x = x5;
        k1 = k7;
        observe(t, x);
        const double fac = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
        if (!last) step_hint_ = h * fac;
        h *= fac;
      } else {
        h *= std::max(0.2, 0.9 * std::pow(en, -0.25));
        if (h < 1e-14 * std::max(1.0, std::abs(t))) throw Error(ErrorKind::StepFailure, "step size underflow");
      }
    }
  }

  template <class Rhs>
  void integrate(const Rhs& rhs, State& x, double t0, double t1) {
    integrate(rhs, x, t0, t1, [](double, const State&) {});
  }

 private:
  FlowOptions opts_;
  double step_hint_ = -1.0;

  static constexpr double a21 = 1.0 / 5.0;
  static constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
  static constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
  static constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                          a54 = -212.0 / 729.0;
  static constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                          a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
  static constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0,
                          b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;
  static constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                          e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
};

// ---------------------------------------------------------------------------
// Euler-Lagrange vector field. State layout: q(2) v(2) action arclength, then optionally the
// 4x4 fundamental matrix of the Jacobi equation in (theta, pi) variables, pi being the
// linearized momentum Lvq theta + Lvv thetadot. That form needs only second derivatives of L.

namespace detail {

inline Vec2 acceleration(const Jet& j, const Vec2& v) {
  return j.Lvv.ldlt().solve(j.Lq - j.Lvq * v);
}

struct BaseRhs {
  const LagrangianModel* model;
  Eigen::Matrix<double, 6, 1> operator()(const Eigen::Matrix<double, 6, 1>& x) const {
    const Vec2 q = x.segment<2>(0), v = x.segment<2>(2);
    const Jet j = model->jet(q, v);
    Eigen::Matrix<double, 6, 1> dx;
    dx << v, acceleration(j, v), j.L, v.norm();
    return dx;
  }
};

struct VariationalRhs {
  const LagrangianModel* model;
  Eigen::Matrix<double, 22, 1> operator()(const Eigen::Matrix<double, 22, 1>& x) const {
    const Vec2 q = x.segment<2>(0), v = x.segment<2>(2);
    const Jet j = model->jet(q, v);
    const Mat2 inv = j.Lvv.inverse();
    Eigen::Matrix<double, 22, 1> dx;
    dx.segment<2>(0) = v;
    dx.segment<2>(2) = inv * (j.Lq - j.Lvq * v);
    dx[4] = j.L;
    dx[5] = v.norm();
    for (int c = 0; c < 4; ++c) {
      const Vec2 th = x.segment<2>(6 + 4 * c);
      const Vec2 pi = x.segment<2>(8 + 4 * c);
      const Vec2 thdot = inv * (pi - j.Lvq * th);
      dx.segment<2>(6 + 4 * c) = thdot;
      dx.segment<2>(8 + 4 * c) = j.Lqq * th + j.Lvq.transpose() * thdot;
    }
    return dx;
  }
};

inline Eigen::Matrix<double, 22, 1> variational_initial(const LagrangianModel& model, const Vec2& q,
                                                        const Vec2& v) {
  const Jet j = model.jet(q, v);
  Eigen::Matrix<double, 22, 1> x = Eigen::Matrix<double, 22, 1>::Zero();
  x << q, v, 0.0, 0.0, Eigen::Matrix<double, 16, 1>::Zero();
  for (int c = 0; c < 4; ++c) {
    Vec2 dq = Vec2::Zero(), dv = Vec2::Zero();
    if (c < 2) dq[c] = 1.0; else dv[c - 2] = 1.0;
    x.segment<2>(6 + 4 * c) = dq;
    x.segment<2>(8 + 4 * c) = j.Lvq * dq + j.Lvv * dv;
  }
  return x;
}

/// Fundamental matrix in (dq, dv) coordinates at the state stored in x.
inline Mat4 propagator_matrix(const LagrangianModel& model, const Eigen::Matrix<double, 22, 1>& x) {
  const Jet j = model.jet(x.segment<2>(0), x.segment<2>(2));
  const Mat2 inv = j.Lvv.inverse();
  Mat4 m;
  for (int c = 0; c < 4; ++c) {
    const Vec2 th = x.segment<2>(6 + 4 * c);
    const Vec2 pi = x.segment<2>(8 + 4 * c);
    m.block<2, 1>(0, c) = th;
    m.block<2, 1>(2, c) = inv * (pi - j.Lvq * th);
  }
  return m;
}

inline void check_drift(double e0, double e1, double t, const FlowOptions& opts) {
  const double allowed = opts.energy_drift_rate * std::max(1.0, std::abs(e0)) * std::max(1.0, t);
  if (std::abs(e1 - e0) > allowed) {
    throw Error(ErrorKind::EnergyDriftExceeded,
                "energy drift " + std::to_string(std::abs(e1 - e0)) + " exceeds " + std::to_string(allowed));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct TrajectorySample {
  double t;
  TangentState state;
};

struct Trajectory {
  std::vector<TrajectorySample> samples;
  double energy_drift = 0.0;
  double action = 0.0;  ///< integral of L along the trajectory

  const TangentState& final_state() const { return samples.back().state; }

  /// Plain-text columns t q1 q2 v1 v2.
  void write_columns(std::ostream& os) const {
    os.precision(17);
    for (const auto& s : samples) {
      os << s.t << ' ' << s.state.q[0] << ' ' << s.state.q[1] << ' ' << s.state.v[0] << ' '
         << s.state.v[1] << '\n';
    }
  }
};

struct Propagator {
  double t = 0.0;
  Mat4 matrix = Mat4::Identity();  ///< acts on (dq, dv)

  Mat2 qq() const { return matrix.block<2, 2>(0, 0); }
  Mat2 qv() const { return matrix.block<2, 2>(0, 2); }
  Mat2 vq() const { return matrix.block<2, 2>(2, 0); }
  Mat2 vv() const { return matrix.block<2, 2>(2, 2); }
};

/// Integrates the Euler-Lagrange flow; every accepted step is recorded with q wrapped.
inline Trajectory integrate(const LagrangianModel& model, const TangentState& s0, double t,
                            const FlowOptions& opts = {}) {
  if (!std::isfinite(t) || t < 0.0) throw Error(ErrorKind::InvalidArgument, "integrate: t must be finite and >= 0");
  const auto& torus = model.torus();
  Trajectory traj;
  const double e0 = energy(model, s0);
  traj.samples.push_back({0.0, {torus.wrap(s0.q), s0.v}});
  Eigen::Matrix<double, 6, 1> x;
  x << s0.q, s0.v, 0.0, 0.0;
  DormandPrince<6> dp(opts);
  double drift = 0.0;
  dp.integrate(detail::BaseRhs{&model}, x, 0.0, t, [&](double tt, const Eigen::Matrix<double, 6, 1>& xx) {
    TangentState s{torus.wrap(xx.segment<2>(0)), xx.segment<2>(2)};
    drift = std::max(drift, std::abs(energy(model, s) - e0));
    traj.samples.push_back({tt, s});
  });
  traj.energy_drift = drift;
  traj.action = x[4];
  detail::check_drift(e0, e0 + drift, t, opts);
  return traj;
}

/// dphi^t(s0) from the variational equations integrated along the base trajectory.
inline Propagator linearized_flow(const LagrangianModel& model, const TangentState& s0, double t,
                                  const FlowOptions& opts = {}) {
  if (!std::isfinite(t) || t < 0.0) throw Error(ErrorKind::InvalidArgument, "linearized_flow: bad duration");
  if (t == 0.0) return {0.0, Mat4::Identity()};
  auto x = detail::variational_initial(model, s0.q, s0.v);
  const double e0 = energy(model, s0);
  DormandPrince<22> dp(opts);
  dp.integrate(detail::VariationalRhs{&model}, x, 0.0, t);
  detail::check_drift(e0, energy(model, {x.segment<2>(0), x.segment<2>(2)}), t, opts);
  return {t, detail::propagator_matrix(model, x)};
}

/// End state (q unwrapped), action, arc length, propagator and end acceleration of one arc.
struct ArcResult {
  TangentState end;
  double action = 0.0;
  double length = 0.0;
  Mat4 propagator = Mat4::Identity();
  Vec2 end_acceleration = Vec2::Zero();
};

inline ArcResult flow_arc(const LagrangianModel& model, const Vec2& q0, const Vec2& v0, double t,
                          const FlowOptions& opts) {
  auto x = detail::variational_initial(model, q0, v0);
  DormandPrince<22> dp(opts);
  dp.integrate(detail::VariationalRhs{&model}, x, 0.0, t);
  ArcResult r;
  r.end = {x.segment<2>(0), x.segment<2>(2)};
  r.action = x[4];
  r.length = x[5];
  r.propagator = detail::propagator_matrix(model, x);
  const Jet j = model.jet(r.end.q, r.end.v);
  r.end_acceleration = detail::acceleration(j, r.end.v);
  return r;
}

struct ArcSample {
  double t;
  TangentState state;  ///< q unwrapped
  Vec2 acceleration;
  Mat4 propagator;
};

/// Samples state and propagator at the given increasing times in [0, T].
inline std::vector<ArcSample> sample_arc(const LagrangianModel& model, const Vec2& q0, const Vec2& v0,
                                         const std::vector<double>& times, const FlowOptions& opts) {
  std::vector<ArcSample> out;
  out.reserve(times.size());
  auto x = detail::variational_initial(model, q0, v0);
  DormandPrince<22> dp(opts);
  double t = 0.0;
  for (double target : times) {
    dp.integrate(detail::VariationalRhs{&model}, x, t, target);
    t = std::max(t, target);
    const TangentState s{x.segment<2>(0), x.segment<2>(2)};
    const Jet j = model.jet(s.q, s.v);
    out.push_back({target, s, detail::acceleration(j, s.v), detail::propagator_matrix(model, x)});
  }
  return out;
}

}  // namespace tonelli
