#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <memory>
#include <nlohmann/json.hpp>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tonelli/errors.hpp"
#include "tonelli/torus.hpp"

namespace tonelli {

/// Value and all first/second derivatives of L at one tangent vector.
/// Lvq(i, j) is d^2 L / dv_i dq_j, so d/dt L_v = Lvq * qdot + Lvv * vdot.
struct Jet {
  double L = 0.0;
  Vec2 Lq = Vec2::Zero();
  Vec2 Lv = Vec2::Zero();
  Mat2 Lqq = Mat2::Zero();
  Mat2 Lvq = Mat2::Zero();
  Mat2 Lvv = Mat2::Zero();
};

class LagrangianModel {
 public:
  class Impl {
   public:
    virtual ~Impl() = default;
    virtual Jet jet(const Vec2& q, const Vec2& v) const = 0;
  };

  LagrangianModel(std::string name, nlohmann::json params, TorusConfig torus,
                  std::shared_ptr<const Impl> impl)
      : name_(std::move(name)), params_(std::move(params)), torus_(torus), impl_(std::move(impl)) {}

  /// q may be any lift; evaluators are periodic.
  Jet jet(const Vec2& q, const Vec2& v) const { return impl_->jet(q, v); }
  Jet jet(const TangentState& s) const { return impl_->jet(s.q, s.v); }
  double L(const Vec2& q, const Vec2& v) const { return impl_->jet(q, v).L; }

  const std::string& name() const { return name_; }
  const nlohmann::json& params() const { return params_; }
  const TorusConfig& torus() const { return torus_; }

  /// Same evaluator under a different label.
  LagrangianModel renamed(std::string name, nlohmann::json params) const {
    return LagrangianModel(std::move(name), std::move(params), torus_, impl_);
  }

 private:
  std::string name_;
  nlohmann::json params_;
  TorusConfig torus_;
  std::shared_ptr<const Impl> impl_;
};

// ---------------------------------------------------------------------------
// Trigonometric series on the torus, the parameter interface for potentials
// and magnetic vector potentials:
//   f(q) = sum_j amp_j * cos(2 pi (m1_j q1 / s1 + m2_j q2 / s2) + phase_j)

struct TrigTerm {
  double amp = 0.0;
  int m1 = 0;
  int m2 = 0;
  double phase = 0.0;
};

class TrigSeries {
 public:
  TrigSeries() = default;
  TrigSeries(std::vector<TrigTerm> terms, const TorusConfig& torus)
      : terms_(std::move(terms)), torus_(torus) {}

  struct Eval {
    double f = 0.0;
    Vec2 grad = Vec2::Zero();
    Mat2 hess = Mat2::Zero();
  };

  Eval operator()(const Vec2& q) const {
    Eval out;
    for (const auto& t : terms_) {
      const Vec2 k(2.0 * M_PI * t.m1 / torus_.side(0), 2.0 * M_PI * t.m2 / torus_.side(1));
      const double arg = k.dot(q) + t.phase;
      const double c = std::cos(arg);
      const double s = std::sin(arg);
      out.f += t.amp * c;
      out.grad -= t.amp * s * k;
      out.hess -= t.amp * c * (k * k.transpose());
    }
    return out;
  }

  bool empty() const { return terms_.empty(); }
  const std::vector<TrigTerm>& terms() const { return terms_; }

 private:
  std::vector<TrigTerm> terms_;
  TorusConfig torus_;
};

inline void to_json(nlohmann::json& j, const TrigTerm& t) {
  j = nlohmann::json{{"amp", t.amp}, {"m1", t.m1}, {"m2", t.m2}, {"phase", t.phase}};
}
inline void from_json(const nlohmann::json& j, TrigTerm& t) {
  t.amp = j.at("amp").get<double>();
  t.m1 = j.value("m1", 0);
  t.m2 = j.value("m2", 0);
  t.phase = j.value("phase", 0.0);
}

namespace detail {

class KineticImpl final : public LagrangianModel::Impl {
 public:
  Jet jet(const Vec2&, const Vec2& v) const override {
    Jet j;
    j.L = 0.5 * v.squaredNorm();
    j.Lv = v;
    j.Lvv = Mat2::Identity();
    return j;
  }
};

/// L = 1/2 |v|^2 + A(q).v - V(q)
class MagneticImpl final : public LagrangianModel::Impl {
 public:
  MagneticImpl(TrigSeries a1, TrigSeries a2, TrigSeries potential)
      : a1_(std::move(a1)), a2_(std::move(a2)), potential_(std::move(potential)) {}

  Jet jet(const Vec2& q, const Vec2& v) const override {
    const auto p = potential_(q);
    const auto b1 = a1_(q);
    const auto b2 = a2_(q);
    Jet j;
    const Vec2 a(b1.f, b2.f);
    j.L = 0.5 * v.squaredNorm() + a.dot(v) - p.f;
    j.Lv = v + a;
    j.Lvv = Mat2::Identity();
    // dA_i/dq_j
    Mat2 da;
    da.row(0) = b1.grad.transpose();
    da.row(1) = b2.grad.transpose();
    j.Lq = da.transpose() * v - p.grad;
    j.Lvq = da;
    j.Lqq = v[0] * b1.hess + v[1] * b2.hess - p.hess;
    return j;
  }

 private:
  TrigSeries a1_, a2_, potential_;
};

/// Blend toward 1/2 |v|^2 in the shell inner <= |v| <= outer.
class ClampImpl final : public LagrangianModel::Impl {
 public:
  ClampImpl(LagrangianModel base, double inner, double outer)
      : base_(std::move(base)), a2_(inner * inner), b2_(outer * outer) {}

  Jet jet(const Vec2& q, const Vec2& v) const override {
    const double u = v.squaredNorm();
    if (u <= a2_) return base_.jet(q, v);
    Jet k;
    k.L = 0.5 * u;
    k.Lv = v;
    k.Lvv = Mat2::Identity();
    if (u >= b2_) return k;

    const Jet b = base_.jet(q, v);
    const double span = b2_ - a2_;
    const double t = (u - a2_) / span;
    // smoothstep S(t) = 6t^5 - 15t^4 + 10t^3 is C^2 at both ends
    const double s = t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
    const double ds = 30.0 * t * t * (1.0 - t) * (1.0 - t);
    const double dds = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
    const double beta = 1.0 - s;
    const double db = -ds / span;            // d beta / du
    const double ddb = -dds / (span * span);  // d^2 beta / du^2

    // L = K + beta * w with w = base - K
    const double w = b.L - k.L;
    const Vec2 wv = b.Lv - k.Lv;
    const Mat2 wvv = b.Lvv - k.Lvv;
    const Vec2 bv = 2.0 * db * v;
    const Mat2 bvv = 2.0 * db * Mat2::Identity() + 4.0 * ddb * (v * v.transpose());

    Jet j;
    j.L = k.L + beta * w;
    j.Lv = k.Lv + bv * w + beta * wv;
    j.Lvv = k.Lvv + bvv * w + bv * wv.transpose() + wv * bv.transpose() + beta * wvv;
    j.Lq = beta * b.Lq;
    j.Lqq = beta * b.Lqq;
    j.Lvq = bv * b.Lq.transpose() + beta * b.Lvq;
    return j;
  }

 private:
  LagrangianModel base_;
  double a2_, b2_;
};

}  // namespace detail

inline LagrangianModel kinetic_model(const TorusConfig& torus = TorusConfig(1.0, 1.0)) {
  return LagrangianModel("kinetic", nlohmann::json::object(), torus,
                         std::make_shared<detail::KineticImpl>());
}

/// L = 1/2 |v|^2 + A(q).v - V(q) with A = (A1, A2).
inline LagrangianModel exact_magnetic_model(const TorusConfig& torus, std::vector<TrigTerm> a1,
                                            std::vector<TrigTerm> a2,
                                            std::vector<TrigTerm> potential) {
  nlohmann::json params{{"A1", a1}, {"A2", a2}, {"V", potential}};
  return LagrangianModel(
      "magnetic", std::move(params), torus,
      std::make_shared<detail::MagneticImpl>(TrigSeries(std::move(a1), torus),
                                             TrigSeries(std::move(a2), torus),
                                             TrigSeries(std::move(potential), torus)));
}

/// L = 1/2 |v|^2 - V(q).
inline LagrangianModel mechanical_model(const TorusConfig& torus, std::vector<TrigTerm> potential) {
  nlohmann::json params{{"V", potential}};
  return LagrangianModel("mechanical", std::move(params), torus,
                         std::make_shared<detail::MagneticImpl>(TrigSeries({}, torus),
                                                                TrigSeries({}, torus),
                                                                TrigSeries(std::move(potential), torus)));
}

// ---------------------------------------------------------------------------


/// E(q, v) = L_v(q, v) v - L(q, v).
inline double energy(const LagrangianModel& model, const TangentState& s) {
  const Jet j = model.jet(s.q, s.v);
  return j.Lv.dot(s.v) - j.L;
}

inline double energy(const Jet& j, const Vec2& v) { return j.Lv.dot(v) - j.L; }

struct EnergyGradients {
  Vec2 Eq;
  Vec2 Ev;
};

inline EnergyGradients energy_gradients(const Jet& j, const Vec2& v) {
  return {j.Lvq.transpose() * v - j.Lq, j.Lvv * v};
}

inline EnergyGradients energy_gradients(const LagrangianModel& model, const TangentState& s) {
  return energy_gradients(model.jet(s.q, s.v), s.v);
}

struct LegendreResult {
  Vec2 v;
  double H;
};

/// Solves p = L_v(q, v) by damped Newton on the convex function v -> L(q,v) - p.v;
/// H(q, p) = p.v - L(q, v).
inline LegendreResult legendre(const LagrangianModel& model, const Vec2& q, const Vec2& p,
                               int max_iter = 100, double tol = 1e-13) {
  Jet j = model.jet(q, Vec2::Zero());
  Vec2 v = j.Lvv.ldlt().solve(p - j.Lv);
  j = model.jet(q, v);
  for (int it = 0; it < max_iter; ++it) {
    const Vec2 g = j.Lv - p;
    const double scale = std::max(1.0, p.norm());
    if (g.norm() <= tol * scale) return {v, p.dot(v) - j.L};
    const Vec2 step = -j.Lvv.ldlt().solve(g);
    const double f0 = j.L - p.dot(v);
    double alpha = 1.0;
    for (int ls = 0; ls < 40; ++ls) {
      const Vec2 trial = v + alpha * step;
      const Jet jt = model.jet(q, trial);
      if (jt.L - p.dot(trial) <= f0 + 1e-4 * alpha * g.dot(step) || alpha < 1e-8) {
        v = trial;
        j = jt;
        break;
      }
      alpha *= 0.5;
    }
  }
  const Vec2 g = j.Lv - p;
  if (g.norm() <= 1e-9 * std::max(1.0, p.norm())) return {v, p.dot(v) - j.L};
  throw Error(ErrorKind::NonConvergence, "legendre: Newton iteration did not converge");
}

/// Largest |v| with E(q, v) = level, sampled over a grid of base points and directions.
/// Uses that lambda -> E(q, lambda u) is increasing for lambda > 0.
inline double max_speed_on_level(const LagrangianModel& model, double level, int grid = 24,
                                 int directions = 24) {
  const TorusConfig& t = model.torus();
  double best = 0.0;
  for (int a = 0; a < grid; ++a) {
    for (int b = 0; b < grid; ++b) {
      const Vec2 q(t.side(0) * (a + 0.5) / grid, t.side(1) * (b + 0.5) / grid);
      if (energy(model, {q, Vec2::Zero()}) >= level) continue;
      for (int d = 0; d < directions; ++d) {
        const double ang = 2.0 * M_PI * d / directions;
        const Vec2 u(std::cos(ang), std::sin(ang));
        double lo = 0.0, hi = 1.0;
        while (energy(model, {q, hi * u}) < level) {
          lo = hi;
          hi *= 2.0;
          if (hi > 1e8) throw Error(ErrorKind::NonConvergence, "energy level is unbounded in velocity");
        }
        for (int it = 0; it < 60; ++it) {
          const double mid = 0.5 * (lo + hi);
          (energy(model, {q, mid * u}) < level ? lo : hi) = mid;
        }
        best = std::max(best, hi);
      }
    }
  }
  return best;
}

/// Smallest eigenvalue of L_vv over random samples with |v| <= vmax; negative means not Tonelli.
inline double min_fiber_convexity(const LagrangianModel& model, double vmax, int samples,
                                  unsigned seed = 7) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double worst = std::numeric_limits<double>::infinity();
  for (int i = 0; i < samples; ++i) {
    const Vec2 q(u01(rng) * model.torus().side(0), u01(rng) * model.torus().side(1));
    const double r = vmax * std::sqrt(u01(rng));
    const double ang = 2.0 * M_PI * u01(rng);
    const Vec2 v(r * std::cos(ang), r * std::sin(ang));
    const Mat2 lvv = model.jet(q, v).Lvv;
    Eigen::SelfAdjointEigenSolver<Mat2> es(0.5 * (lvv + lvv.transpose()));
    worst = std::min(worst, es.eigenvalues()[0]);
  }
  return worst;
}

struct ClampedModel {
  LagrangianModel model;
  double inner_radius;  ///< model agrees with the input for |v| <= inner_radius
  double outer_radius;  ///< model equals 1/2 |v|^2 for |v| >= outer_radius (R_clamp)
};

/// Replaces L by 1/2 |v|^2 far from the sublevel {E <= k + margin}. The blend shell starts at
/// twice the largest speed on that level and ends at twice that radius; the radius is doubled
/// until sampled fiberwise convexity holds.
inline ClampedModel clamp_quadratic_at_infinity(const LagrangianModel& model, double k,
                                                double margin = -1.0) {
  if (!std::isfinite(k)) throw Error(ErrorKind::InvalidArgument, "clamp: k must be finite");
  if (margin < 0.0) margin = 0.1 * (1.0 + std::abs(k));
  double vmax = max_speed_on_level(model, k + margin);
  if (vmax <= 0.0) vmax = 0.5;
  double inner = 2.0 * vmax;
  for (int attempt = 0; attempt < 8; ++attempt, inner *= 2.0) {
    const double outer = 2.0 * inner;
    nlohmann::json params{{"base", model.name()},
                          {"base_params", model.params()},
                          {"inner_radius", inner},
                          {"outer_radius", outer}};
    LagrangianModel clamped(model.name() + "+clamp", std::move(params), model.torus(),
                            std::make_shared<detail::ClampImpl>(model, inner, outer));
    if (min_fiber_convexity(clamped, 1.5 * outer, 4000) > 0.0) return {clamped, inner, outer};
  }
  throw Error(ErrorKind::ClampTooTight, "no clamp radius keeps the Lagrangian fiberwise convex");
}

}  // namespace tonelli
