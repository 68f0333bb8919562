#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <unsupported/Eigen/Splines>
#include <vector>

#include "tonelli/action.hpp"
#include "tonelli/errors.hpp"
#include "tonelli/levels.hpp"
#include "tonelli/model.hpp"
#include "tonelli/parallel.hpp"

namespace tonelli {

// ---------------------------------------------------------------------------
// Geometry of discrete loops

namespace detail {

inline double cross2(const Vec2& a, const Vec2& b) { return a[0] * b[1] - a[1] * b[0]; }

/// Proper crossing of the open segments [p, p + r] and [s, s + u].
inline bool segments_cross(const Vec2& p, const Vec2& r, const Vec2& s, const Vec2& u) {
  const double den = cross2(r, u);
  const double scale = r.norm() * u.norm();
  if (std::abs(den) <= 1e-14 * scale) return false;
  const Vec2 d = s - p;
  const double t = cross2(d, u) / den;
  const double w = cross2(d, r) / den;
  constexpr double eps = 1e-12;
  return t > eps && t < 1.0 - eps && w > eps && w < 1.0 - eps;
}

}  // namespace detail

/// Number of crossings between non-adjacent edges of the closed polygon on the torus.
inline int self_intersections(const TorusConfig& torus, const DiscreteLoop& loop) {
  const std::size_t h = loop.h();
  std::vector<Vec2> d(h);
  for (std::size_t i = 0; i < h; ++i) d[i] = torus.displacement(loop.points[i], loop.points[(i + 1) % h]);
  int count = 0;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = i + 1; j < h; ++j) {
      if (j == i + 1 || (i == 0 && j == h - 1)) continue;
      const Vec2 rel = torus.displacement(loop.points[i], loop.points[j]);
      for (int sx = -1; sx <= 1; ++sx) {
        for (int sy = -1; sy <= 1; ++sy) {
          const Vec2 s = loop.points[i] + rel + Vec2(sx * torus.side(0), sy * torus.side(1));
          if (detail::segments_cross(loop.points[i], d[i], s, d[j])) ++count;
        }
      }
    }
  }
  return count;
}

/// Distance from a point to the closed polyline through pts, on the torus.
inline double distance_to_polyline(const TorusConfig& torus, const Vec2& x, const std::vector<Vec2>& pts) {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = torus.displacement(x, pts[i]);
    const Vec2 e = torus.displacement(pts[i], pts[(i + 1) % n]);
    const double t = std::clamp(-a.dot(e) / std::max(e.squaredNorm(), 1e-300), 0.0, 1.0);
    best = std::min(best, (a + t * e).norm());
  }
  return best;
}

/// Symmetric Hausdorff distance between two closed polylines (vertices against edges).
inline double hausdorff(const TorusConfig& torus, const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  double d = 0.0;
  for (const auto& x : a) d = std::max(d, distance_to_polyline(torus, x, b));
  for (const auto& x : b) d = std::max(d, distance_to_polyline(torus, x, a));
  return d;
}

// ---------------------------------------------------------------------------

struct OrbitRecord {
  DiscreteLoop loop;
  double action = 0.0;
  double period = 0.0;
  double length = 0.0;
  double gradient_norm = 0.0;
  double energy_error = 0.0;  ///< max over segments of |E - k|
  SpectralReport spectral;
  std::array<long, 2> winding{0, 0};
  bool is_local_min = false;
  int iterations = 0;
  TangentState initial;  ///< (q_0, nu^-_0)
};

inline OrbitRecord make_record(const LagrangianModel& model, double k, const DiscreteLoop& loop,
                               const LoopEvaluation& ev, const ActionOptions& opts, bool with_spectrum = true) {
  OrbitRecord r;
  r.loop = loop;
  r.action = ev.action;
  r.period = loop.period();
  r.length = ev.length;
  r.gradient_norm = ev.gradient.norm();
  for (const auto& s : ev.segments) r.energy_error = std::max(r.energy_error, std::abs(s.energy - k));
  r.winding = winding(model.torus(), loop);
  r.initial = {loop.points[0], ev.segments[0].nu_minus};
  if (with_spectrum) {
    r.spectral = spectral_report(model, k, loop, ev, opts);
    r.is_local_min = r.spectral.ind_H == 0;
  }
  return r;
}

/// Dense sample of the orbit through the record's initial state over one period.
inline std::vector<Vec2> dense_trace(const LagrangianModel& model, const OrbitRecord& r, int n = 400,
                                     const FlowOptions& flow = {}) {
  return sample_orbit(model, r.initial, r.period, n, flow).points;
}

// ---------------------------------------------------------------------------
// Descent

enum class DescentMode {
  Minimize,  ///< monotone decrease of S_k; converges to local minimizers
  Critical   ///< Levenberg-Marquardt on grad S_k = 0; converges to saddles as well
};

struct DescendOptions {
  ActionOptions action{};
  DescentMode mode = DescentMode::Minimize;
  int max_iter = 300;
  double armijo = 1e-4;
  bool spectrum = true;
  /// cap on the per-iteration displacement of any point, as a fraction of rho
  double max_point_step = 0.125;
  /// called with (iteration, action, gradient norm) for the seed and after every accepted step
  std::function<void(int, double, double)> monitor;
};

namespace detail {

inline DiscreteLoop displaced(const TorusConfig& torus, const DiscreteLoop& loop, const Eigen::VectorXd& d,
                              double a) {
  DiscreteLoop out = loop;
  const std::size_t h = loop.h();
  for (std::size_t i = 0; i < h; ++i) out.points[i] = torus.wrap(loop.points[i] + a * d.segment<2>(2 * i));
  out.tau = loop.tau + a * d[2 * h];
  return out;
}

/// Largest a <= 1 keeping point moves below cap and tau above half its value.
inline double step_cap(const Eigen::VectorXd& d, std::size_t h, double point_cap, double tau) {
  double a = 1.0;
  for (std::size_t i = 0; i < h; ++i) {
    const double n = d.segment<2>(2 * i).norm();
    if (n * a > point_cap) a = point_cap / n;
  }
  const double dt = std::abs(d[2 * h]);
  if (dt * a > 0.5 * tau) a = 0.5 * tau / dt;
  return a;
}

inline std::optional<LoopEvaluation> try_evaluate(const LagrangianModel& model, double k, const DiscreteLoop& loop,
                                                  const ActionOptions& opts, const LoopEvaluation* warm = nullptr) {
  if (!loop_in_domain(model.torus(), loop, opts)) return std::nullopt;
  try {
    return evaluate_loop(model, k, loop, opts, warm);
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace detail

/// Drives a seed loop to a critical point of S_k and returns its record. Minimize mode uses
/// Newton steps preconditioned by |Hessian| with an Armijo line search on S_k, so accepted
/// steps strictly decrease the action. Critical mode runs Levenberg-Marquardt on the gradient.
inline OrbitRecord descend(const LagrangianModel& model, double k, const DiscreteLoop& seed,
                           const DescendOptions& opts = {}) {
  const auto& torus = model.torus();
  const auto& aopt = opts.action;
  require_valid(torus, seed, aopt);
  const std::size_t h = seed.h();
  const double point_cap = opts.max_point_step * aopt.rho_for(torus);

  DiscreteLoop x = seed;
  LoopEvaluation ev = evaluate_loop(model, k, x, aopt);
  double lambda = -1.0;
  int it = 0;
  if (opts.monitor) opts.monitor(0, ev.action, ev.gradient.norm());
  for (; it < opts.max_iter && ev.gradient.norm() > aopt.tol_crit; ++it) {
    const Eigen::VectorXd g = ev.gradient.differential();
    Eigen::MatrixXd H = hessian_matrix(model, k, x, ev);
    H = 0.5 * (H + H.transpose());
    bool accepted = false;

    if (opts.mode == DescentMode::Minimize) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
      const Eigen::VectorXd lam = es.eigenvalues().cwiseAbs();
      const double floor = std::max(1e-8 * lam.maxCoeff(), 1e-10);
      const Eigen::VectorXd d =
          -es.eigenvectors() * ((es.eigenvectors().transpose() * g).array() / lam.array().max(floor)).matrix();
      const double slope = g.dot(d);
      double a = detail::step_cap(d, h, point_cap, x.tau);
      for (int ls = 0; ls < 60 && a > 1e-14; ++ls, a *= 0.5) {
        const DiscreteLoop y = detail::displaced(torus, x, d, a);
        if (y.tau <= aopt.floor()) {
          throw Error(ErrorKind::PeriodCollapse, "descent pushed tau to the floor");
        }
        auto ey = detail::try_evaluate(model, k, y, aopt, &ev);
        if (ey && ey->action <= ev.action + opts.armijo * a * slope) {
          x = y;
          ev = std::move(*ey);
          accepted = true;
          break;
        }
      }
    } else {
      const Eigen::MatrixXd H2 = H * H;
      if (lambda < 0.0) lambda = 1e-6 * std::max(H2.diagonal().maxCoeff(), 1e-12);
      const double g0 = g.norm();
      for (int ls = 0; ls < 40; ++ls) {
        Eigen::MatrixXd A = H2;
        A.diagonal().array() += lambda;
        const Eigen::VectorXd d = -A.ldlt().solve(H * g);
        const double a = detail::step_cap(d, h, point_cap, x.tau);
        const DiscreteLoop y = detail::displaced(torus, x, d, a);
        if (y.tau <= aopt.floor()) {
          throw Error(ErrorKind::PeriodCollapse, "critical-point search pushed tau to the floor");
        }
        auto ey = detail::try_evaluate(model, k, y, aopt, &ev);
        if (ey && ey->gradient.differential().norm() < g0) {
          x = y;
          ev = std::move(*ey);
          lambda = std::max(lambda / 3.0, 1e-300);
          accepted = true;
          break;
        }
        lambda *= 4.0;
      }
    }
    if (!accepted) break;
    if (opts.monitor) opts.monitor(it + 1, ev.action, ev.gradient.norm());
  }
  if (!(ev.gradient.norm() <= aopt.tol_crit)) {
    throw Error(ErrorKind::NonConvergence,
                "descent stalled with gradient norm " + std::to_string(ev.gradient.norm()));
  }
  OrbitRecord r = make_record(model, k, x, ev, aopt, opts.spectrum);
  r.iterations = it;
  return r;
}

// ---------------------------------------------------------------------------
// Discretization size and a-priori bounds

/// h = max(16, ceil(period * v_max / (rho / 2))), also large enough that tau stays below tau_cap.
inline int default_h(double period, double v_max, double rho, double tau_cap = 0.0) {
  int h = std::max(16, static_cast<int>(std::ceil(period * v_max / (0.5 * rho))));
  if (tau_cap > 0.0) h = std::max(h, static_cast<int>(std::ceil(period / tau_cap)));
  return h;
}

/// Period bound for closed curves of action S at energy k > e0: (S + int |d theta|) / (k - e0).
inline double period_bound(const LagrangianModel& model, double k, double action_value) {
  const double e = e0(model);
  if (!(k > e)) throw Error(ErrorKind::BelowE0, "period bound requires k > e0");
  return (action_value + dtheta_total_variation(model)) / (k - e);
}

/// Length bound: period bound times the maximal speed on the energy level k.
inline double length_bound(const LagrangianModel& model, double k, double action_value) {
  return period_bound(model, k, action_value) * max_speed_on_level(model, k);
}

// ---------------------------------------------------------------------------
// Seeds and local minimizers

struct SeedShape {
  Vec2 center;
  double a = 0.0, b = 0.0;  ///< semi-axes along q1, q2
  int orientation = 1;     ///< +1 counterclockwise
};

inline DiscreteLoop ellipse_loop(const TorusConfig& torus, const SeedShape& s, int h, double tau) {
  DiscreteLoop loop;
  loop.tau = tau;
  for (int i = 0; i < h; ++i) {
    const double th = 2.0 * M_PI * i / h;
    loop.points.push_back(torus.wrap(s.center + Vec2(s.a * std::cos(th), s.orientation * s.b * std::sin(th))));
  }
  return loop;
}

struct SeedOptions {
  int centers_per_side = 4;
  int radii = 6;
  std::vector<double> aspects{1.0};
  int tau_evaluations = 18;
};

struct SeedCandidate {
  DiscreteLoop loop;
  double action = std::numeric_limits<double>::infinity();
};

/// Best tau for a fixed point configuration by golden-section search on log tau.
inline SeedCandidate optimize_tau(const LagrangianModel& model, double k, DiscreteLoop loop, double tau_lo,
                                  double tau_hi, const ActionOptions& opts, int evaluations) {
  auto f = [&](double lt) {
    loop.tau = std::exp(lt);
    auto ev = detail::try_evaluate(model, k, loop, opts);
    return ev ? ev->action : std::numeric_limits<double>::infinity();
  };
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = std::log(tau_lo), b = std::log(tau_hi);
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < evaluations; ++i) {
    if (fc <= fd) {
      b = d, d = c, fd = fc;
      c = b - gr * (b - a);
      fc = f(c);
    } else {
      a = c, c = d, fc = fd;
      d = a + gr * (b - a);
      fd = f(d);
    }
  }
  SeedCandidate out;
  out.loop = loop;
  out.loop.tau = std::exp(fc <= fd ? c : d);
  out.action = std::min(fc, fd);
  return out;
}

/// Circle and ellipse loops over a grid of centers, log-spaced radii and both orientations, each
/// with its action-minimizing tau. Sorted by action.
inline std::vector<SeedCandidate> loop_seeds(const LagrangianModel& model, double k, const ActionOptions& opts,
                                             const SeedOptions& sopt = {}) {
  const auto& torus = model.torus();
  const double rho = opts.rho_for(torus);
  const double r_max = 0.45 * torus.min_side();
  const double r_min = 0.05 * torus.min_side();
  const double v_ref = std::max(max_speed_on_level(model, std::max(k, e0(model)) + 1e-9), 1e-3);
  std::vector<SeedShape> shapes;
  for (int ci = 0; ci < sopt.centers_per_side; ++ci) {
    for (int cj = 0; cj < sopt.centers_per_side; ++cj) {
      const Vec2 c(torus.side(0) * ci / sopt.centers_per_side, torus.side(1) * cj / sopt.centers_per_side);
      for (int ri = 0; ri < sopt.radii; ++ri) {
        const double r = r_min * std::pow(r_max / r_min, sopt.radii > 1 ? double(ri) / (sopt.radii - 1) : 1.0);
        for (double asp : sopt.aspects) {
          const double a = asp >= 1.0 ? r : r * asp;
          const double b = asp >= 1.0 ? r / asp : r;
          for (int o : {1, -1}) shapes.push_back({c, a, b, o});
        }
      }
    }
  }
  std::vector<SeedCandidate> out(shapes.size());
  parallel_for(shapes.size(), [&](std::size_t i) {
    const auto& s = shapes[i];
    const double perim = M_PI * (3.0 * (s.a + s.b) - std::sqrt((3.0 * s.a + s.b) * (s.a + 3.0 * s.b)));
    const int h = default_h(perim, 1.0, rho, 0.5 * opts.epsilon);
    const double tau0 = perim / h / v_ref;
    const double lo = std::max(opts.floor() * 1.01, tau0 / 8.0);
    const double hi = std::min(opts.epsilon * 0.99, tau0 * 8.0);
    if (!(hi > lo)) return;
    out[i] = optimize_tau(model, k, ellipse_loop(torus, s, h, tau0), lo, hi, opts, sopt.tau_evaluations);
  });
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.action < b.action; });
  return out;
}

struct LocalMinOptions {
  DescendOptions descend{};
  SeedOptions seeds{};
  int n_seeds = 12;  ///< budget of descents
};

/// Multi-start minimization from the most negative loop seeds. Returns the first descent that
/// ends at a negative-action critical point with ind_H = 0 and a simple polygon.
inline OrbitRecord find_local_minimizer(const LagrangianModel& model, double k, const LocalMinOptions& opts = {}) {
  const auto seeds = loop_seeds(model, k, opts.descend.action, opts.seeds);
  std::vector<const SeedCandidate*> negative;
  for (const auto& s : seeds) {
    if (s.action < 0.0 && static_cast<int>(negative.size()) < opts.n_seeds) negative.push_back(&s);
  }
  if (negative.empty()) throw Error(ErrorKind::NotFound, "no negative-action seed loop");
  std::vector<std::optional<OrbitRecord>> results(negative.size());
  DescendOptions d = opts.descend;
  d.mode = DescentMode::Minimize;
  parallel_for(negative.size(), [&](std::size_t i) {
    try {
      results[i] = descend(model, k, negative[i]->loop, d);
    } catch (const Error&) {
    }
  });
  for (const auto& r : results) {
    if (r && r->action < 0.0 && r->spectral.ind_H == 0 && self_intersections(model.torus(), r->loop) == 0) {
      return *r;
    }
  }
  throw Error(ErrorKind::NotFound, "no negative-action local minimizer within the seed budget");
}

// ---------------------------------------------------------------------------
// Deduplication

struct DedupThresholds {
  double hausdorff_rel = 1e-3;  ///< relative to the torus diameter
  double period_rel = 1e-4;
  int max_ratio = 16;
};

enum class OrbitRelation { Distinct, Same, FirstIteratesSecond, SecondIteratesFirst };

/// Compares two periodic orbits: equal up to time shift, one an iterate of the other, or distinct.
inline OrbitRelation relate_orbits(const LagrangianModel& model, const OrbitRecord& a, const OrbitRecord& b,
                                   const DedupThresholds& t = {}) {
  const double ratio = a.period >= b.period ? a.period / b.period : b.period / a.period;
  const double m = std::round(ratio);
  if (m < 1.0 || m > t.max_ratio || std::abs(ratio - m) > t.period_rel * m) return OrbitRelation::Distinct;
  const auto& longer = a.period >= b.period ? a : b;
  const auto& shorter = a.period >= b.period ? b : a;
  const auto pa = dense_trace(model, longer, 200 * static_cast<int>(m));
  const auto pb = dense_trace(model, shorter, 200);
  if (hausdorff(model.torus(), pa, pb) >= t.hausdorff_rel * model.torus().diameter()) return OrbitRelation::Distinct;
  if (m == 1.0) return OrbitRelation::Same;
  return a.period >= b.period ? OrbitRelation::FirstIteratesSecond : OrbitRelation::SecondIteratesFirst;
}

/// Keeps one record per geometric orbit, preferring primitive (non-iterated) representatives.
inline std::vector<OrbitRecord> dedup_orbits(const LagrangianModel& model, const std::vector<OrbitRecord>& in,
                                             const DedupThresholds& t = {}) {
  std::vector<OrbitRecord> out;
  for (const auto& r : in) {
    bool keep = true;
    for (auto& o : out) {
      const auto rel = relate_orbits(model, r, o, t);
      if (rel == OrbitRelation::Same || rel == OrbitRelation::FirstIteratesSecond) {
        keep = false;
        break;
      }
      if (rel == OrbitRelation::SecondIteratesFirst) {
        o = r;
        keep = false;
        break;
      }
    }
    if (keep) out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mountain pass via the string method

struct MinimaxOptions {
  DescendOptions descend{};
  int nodes = 32;
  int max_sweeps = 400;
  double step = 0.3;      ///< pseudo-time step of the node-wise (preconditioned) gradient flow
  int climb_start = 50;   ///< sweeps of plain string evolution before the max node starts climbing
  double handoff_tol = 2e-2;  ///< climbing-node gradient norm at which Levenberg-Marquardt takes over
  int handoff_every = 25;     ///< sweeps between handoff attempts
  bool staggered = true;      ///< block-by-block initial path for n > 1
  bool linear_too = false;    ///< for n > 1 also run the straight initial path and keep the lower max
  /// node-wise |Hessian|^{-1} preconditioning, refreshed every few sweeps; 0 disables it
  int precondition_every = 10;
  /// called once per sweep with (sweep, max node, max action, gradient norm at the climbing node)
  std::function<void(int, int, double, double)> monitor;
};

struct MinimaxResult {
  int n = 0;
  double value = 0.0;
  std::vector<DiscreteLoop> path;
  std::vector<double> path_actions;
  std::optional<OrbitRecord> near_critical;
  int max_node = 0;
  int sweeps = 0;
  bool converged = false;
};

/// Resamples a critical loop onto h_new points along its orbit and polishes it back to a
/// critical point.
inline OrbitRecord refine_record(const LagrangianModel& model, double k, const OrbitRecord& r, int h_new,
                                 const DescendOptions& opts = {}) {
  DiscreteLoop loop = sample_orbit(model, r.initial, r.period, h_new, opts.action.shoot.flow);
  DescendOptions d = opts;
  d.mode = DescentMode::Critical;
  return descend(model, k, loop, d);
}

/// Smallest multiple of h for which the double-cover anchor stays inside the domain.
inline int anchor_ready_h(const LagrangianModel& model, const OrbitRecord& r, const ActionOptions& opts) {
  const double rho = opts.rho_for(model.torus());
  double max_step = 0.0;
  for (std::size_t i = 0; i < r.loop.h(); ++i) {
    max_step = std::max(max_step, model.torus().distance(r.loop.points[i], r.loop.points[(i + 1) % r.loop.h()]));
  }
  int f = 1;
  while (2.0 * r.loop.tau / f >= 0.9 * opts.epsilon || 2.0 * max_step / f >= 0.9 * rho) ++f;
  return static_cast<int>(r.loop.h()) * f;
}

/// ζ: the minimizer traversed twice on the same number of points (every other point of the double
/// cover, doubled tau). It has exactly twice the minimizer's action.
inline DiscreteLoop double_cover_anchor(const DiscreteLoop& mu) {
  const auto twice = iterate(mu, 2);
  DiscreteLoop z;
  z.tau = 2.0 * mu.tau;
  for (std::size_t i = 0; i < twice.h(); i += 2) z.points.push_back(twice.points[i]);
  return z;
}

namespace detail {

/// Coordinates (lifted points, tau) of a loop; lifts follow consecutive shortest displacements
/// starting from `start`.
inline Eigen::VectorXd loop_coordinates(const TorusConfig& torus, const DiscreteLoop& loop, const Vec2& start) {
  const std::size_t h = loop.h();
  Eigen::VectorXd x(2 * h + 1);
  Vec2 p = start;
  for (std::size_t i = 0; i < h; ++i) {
    if (i > 0) p += torus.displacement(loop.points[i - 1], loop.points[i]);
    x.segment<2>(2 * i) = p;
  }
  x[2 * h] = loop.tau;
  return x;
}

inline DiscreteLoop loop_from_coordinates(const TorusConfig& torus, const Eigen::VectorXd& x) {
  const std::size_t h = (x.size() - 1) / 2;
  DiscreteLoop loop;
  loop.tau = x[2 * h];
  for (std::size_t i = 0; i < h; ++i) loop.points.push_back(torus.wrap(x.segment<2>(2 * i)));
  return loop;
}

/// Norm of the metric <<.,.>>: points weigh 1, tau weighs h.
inline double metric_norm(const Eigen::VectorXd& v) {
  const std::size_t h = (v.size() - 1) / 2;
  return std::sqrt(v.head(2 * h).squaredNorm() + static_cast<double>(h) * v[2 * h] * v[2 * h]);
}
inline double metric_dot(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const std::size_t h = (a.size() - 1) / 2;
  return a.head(2 * h).dot(b.head(2 * h)) + static_cast<double>(h) * a[2 * h] * b[2 * h];
}

/// Redistributes nodes to equal metric arc length along a cubic spline through them.
inline void reparametrize(std::vector<Eigen::VectorXd>& nodes) {
  const std::size_t N = nodes.size();
  std::vector<double> s(N, 0.0);
  for (std::size_t j = 1; j < N; ++j) s[j] = s[j - 1] + metric_norm(nodes[j] - nodes[j - 1]);
  if (!(s.back() > 0.0)) return;
  Eigen::Spline<double, 1, 3>::KnotVectorType u(N);
  for (std::size_t j = 0; j < N; ++j) u[j] = s[j] / s.back();
  for (std::size_t j = 1; j < N; ++j) u[j] = std::max(u[j], u[j - 1] + 1e-12);
  u[N - 1] = 1.0;
  const long dim = nodes[0].size();
  std::vector<Eigen::VectorXd> out(N, Eigen::VectorXd(dim));
  using Spline1 = Eigen::Spline<double, 1, 3>;
  const int degree = N > 3 ? 3 : static_cast<int>(N) - 1;
  for (long c = 0; c < dim; ++c) {
    Eigen::RowVectorXd vals(N);
    for (std::size_t j = 0; j < N; ++j) vals[j] = nodes[j][c];
    const Spline1 sp = Eigen::SplineFitting<Spline1>::Interpolate(vals, degree, u);
    for (std::size_t j = 1; j + 1 < N; ++j) out[j][c] = sp(static_cast<double>(j) / (N - 1))(0);
  }
  for (std::size_t j = 1; j + 1 < N; ++j) nodes[j] = out[j];
}

}  // namespace detail

/// Mountain-pass value between the n-th iterates of a low-action anchor and of a local minimizer.
inline MinimaxResult minimax(const LagrangianModel& model, double k, int n, const DiscreteLoop& anchor,
                             const OrbitRecord& minimizer, const MinimaxOptions& opts = {}) {
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "minimax: n must be >= 1");
  if (anchor.h() != minimizer.loop.h()) {
    throw Error(ErrorKind::InvalidArgument, "minimax: anchor and minimizer need the same number of points");
  }
  const auto& torus = model.torus();
  const auto& aopt = opts.descend.action;
  const double s_anchor = discrete_action(model, k, anchor, aopt);
  if (!(s_anchor < minimizer.action)) {
    throw Error(ErrorKind::InvalidArgument, "minimax: the anchor must have lower action than the minimizer");
  }
  const auto wa = winding(torus, anchor), wm = winding(torus, minimizer.loop);
  if (wa != wm) throw Error(ErrorKind::InvalidArgument, "minimax: endpoints in different winding classes");

  const DiscreteLoop A = iterate(anchor, n), B = iterate(minimizer.loop, n);
  const std::size_t H = A.h();
  const Eigen::VectorXd xa = detail::loop_coordinates(torus, A, A.points[0]);
  const Eigen::VectorXd xb =
      detail::loop_coordinates(torus, B, A.points[0] + torus.displacement(A.points[0], B.points[0]));
  const int N = std::max(opts.nodes, 3);
  const double point_cap = opts.descend.max_point_step * aopt.rho_for(torus);

  DescendOptions crit = opts.descend;
  crit.mode = DescentMode::Critical;
  crit.max_iter = 60;

  auto run = [&](std::vector<Eigen::VectorXd> nodes) {
    MinimaxResult res;
    res.n = n;
    std::vector<double> act(N, 0.0);
    std::vector<Eigen::VectorXd> grad(N);
    std::vector<std::optional<LoopEvaluation>> evs(N);
    std::vector<Eigen::MatrixXd> pinv(N);  // preconditioners in the coordinate metric
    std::vector<double> alpha(N, opts.step);
    std::vector<Eigen::VectorXd> prev_nodes = nodes;
    bool ok = true;
    int last_handoff = -opts.handoff_every;
    for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
      std::vector<char> failed(N, 0);
      parallel_for(static_cast<std::size_t>(N), [&](std::size_t j) {
        const LoopEvaluation* warm = evs[j] ? &*evs[j] : nullptr;
        auto ev = detail::try_evaluate(model, k, detail::loop_from_coordinates(torus, nodes[j]), aopt, warm);
        if (!ev) {
          failed[j] = 1;
          return;
        }
        act[j] = ev->action;
        Eigen::VectorXd g = ev->gradient.differential();
        g[2 * H] /= static_cast<double>(H);  // metric gradient
        grad[j] = g;
        evs[j] = std::move(ev);
      });
      for (int j = 0; j < N; ++j) {
        if (!failed[j]) {
          alpha[j] = std::min(opts.step, 1.25 * alpha[j]);
          continue;
        }
        if (sweep == 0 || j == 0 || j == N - 1) {
          ok = false;
          continue;
        }
        // the last move of this node left the domain: undo it and shorten its step
        nodes[j] = prev_nodes[j];
        alpha[j] *= 0.25;
      }
      if (!ok) break;
      const int jmax = static_cast<int>(std::max_element(act.begin() + 1, act.end() - 1) - act.begin());
      const double vmax = *std::max_element(act.begin(), act.end());
      res.value = vmax;
      res.max_node = jmax;
      res.sweeps = sweep + 1;
      const bool climbing = sweep >= opts.climb_start;
      double climb_residual = std::numeric_limits<double>::infinity();
      if (climbing) climb_residual = detail::metric_norm(grad[jmax]);
      if (opts.monitor) opts.monitor(sweep, jmax, vmax, climb_residual);

      if (climbing && climb_residual < opts.handoff_tol && sweep - last_handoff >= opts.handoff_every) {
        last_handoff = sweep;
        try {
          auto rec = descend(model, k, detail::loop_from_coordinates(torus, nodes[jmax]), crit);
          // accept only a critical point that stays near the climbing node
          const Eigen::VectorXd xr = detail::loop_coordinates(
              torus, rec.loop, nodes[jmax].head<2>() + torus.displacement(nodes[jmax].head<2>(), rec.loop.points[0]));
          if (detail::metric_norm(xr - nodes[jmax]) < 0.25 * detail::metric_norm(nodes[jmax + 1] - nodes[jmax - 1]) + 1e-9) {
            res.near_critical = std::move(rec);
            res.converged = true;
            break;
          }
        } catch (const Error&) {
        }
      }

      if (opts.precondition_every > 0 && sweep % opts.precondition_every == 0) {
        parallel_for(static_cast<std::size_t>(N), [&](std::size_t j) {
          if (j == 0 || j + 1 == static_cast<std::size_t>(N)) return;
          Eigen::MatrixXd Hj = hessian_matrix(model, k, detail::loop_from_coordinates(torus, nodes[j]), *evs[j]);
          Hj = 0.5 * (Hj + Hj.transpose());
          // express in the metric so that the preconditioned step is comparable to the metric gradient
          Eigen::VectorXd w = Eigen::VectorXd::Ones(Hj.rows());
          w[2 * H] = 1.0 / std::sqrt(static_cast<double>(H));
          Hj = w.asDiagonal() * Hj * w.asDiagonal();
          Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Hj);
          const Eigen::VectorXd lam = es.eigenvalues().cwiseAbs();
          const double floor = std::max(1e-2 * lam.maxCoeff(), 1e-8);
          const Eigen::VectorXd inv = lam.array().max(floor).inverse().matrix();
          pinv[j] = w.asDiagonal() * (es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose()) *
                    w.asDiagonal().inverse();
        });
      }

      std::vector<Eigen::VectorXd> next = nodes;
      for (int j = 1; j + 1 < N; ++j) {
        Eigen::VectorXd t = nodes[j + 1] - nodes[j - 1];
        t /= std::max(detail::metric_norm(t), 1e-300);
        const double gt = detail::metric_dot(grad[j], t);
        Eigen::VectorXd d = (climbing && j == jmax) ? Eigen::VectorXd(-(grad[j] - 2.0 * gt * t))
                                                    : Eigen::VectorXd(-(grad[j] - gt * t));
        if (pinv[j].size() > 0) d = pinv[j] * d;
        const Eigen::VectorXd step = alpha[j] * d;
        const double a = detail::step_cap(step, H, point_cap, nodes[j][2 * H]);
        next[j] = nodes[j] + a * step;
      }
      prev_nodes = nodes;
      nodes = std::move(next);
      if (!climbing) detail::reparametrize(nodes);
    }
    if (!ok) {
      res.value = std::numeric_limits<double>::infinity();
      return res;
    }
    res.path_actions = act;
    for (const auto& x : nodes) res.path.push_back(detail::loop_from_coordinates(torus, x));
    res.path.front() = A;  // exact endpoints, free of lift/wrap roundoff
    res.path.back() = B;
    if (res.near_critical) res.value = std::max(res.near_critical->action, std::max(act.front(), act.back()));
    return res;
  };

  std::vector<std::vector<Eigen::VectorXd>> starts;
  if (n == 1 || !opts.staggered || opts.linear_too) {
    std::vector<Eigen::VectorXd> lin(N);
    for (int j = 0; j < N; ++j) {
      const double s = static_cast<double>(j) / (N - 1);
      lin[j] = (1.0 - s) * xa + s * xb;
    }
    starts.push_back(lin);
  }
  if (opts.staggered && n > 1) {
    // block b switches from anchor to minimizer during [b / n, (b + 1) / n]; tau follows linearly
    const std::size_t h = anchor.h();
    std::vector<Eigen::VectorXd> st(N);
    for (int j = 0; j < N; ++j) {
      const double s = static_cast<double>(j) / (N - 1);
      Eigen::VectorXd x(xa.size());
      for (int b = 0; b < n; ++b) {
        const double w = std::clamp(s * n - b, 0.0, 1.0);
        x.segment(2 * h * b, 2 * h) = (1.0 - w) * xa.segment(2 * h * b, 2 * h) + w * xb.segment(2 * h * b, 2 * h);
      }
      x[2 * H] = (1.0 - s) * xa[2 * H] + s * xb[2 * H];
      st[j] = x;
    }
    starts.push_back(st);
  }

  MinimaxResult best;
  best.value = std::numeric_limits<double>::infinity();
  for (auto& st : starts) {
    auto r = run(st);
    if (r.value < best.value) best = std::move(r);
  }
  if (!std::isfinite(best.value)) {
    throw Error(ErrorKind::PathBudgetExceeded, "minimax: every initial path left the domain");
  }
  if (!best.converged) {
    throw Error(ErrorKind::PathBudgetExceeded, "minimax: string did not converge within the sweep budget");
  }
  return best;
}

struct ScanResult {
  OrbitRecord minimizer;
  std::vector<MinimaxResult> minimax;
  std::vector<OrbitRecord> orbits;  ///< deduplicated, negative action
  DedupThresholds thresholds;
};

/// Minimizer plus the mountain-pass orbits for n = 1..n_max, deduplicated, negative action only.
inline ScanResult multiplicity_scan(const LagrangianModel& model, double k, int n_max, const OrbitRecord& minimizer,
                                    const MinimaxOptions& opts = {}, const DedupThresholds& t = {}) {
  if (n_max < 1) throw Error(ErrorKind::InvalidArgument, "multiplicity_scan: n_max must be >= 1");
  ScanResult out;
  out.thresholds = t;
  const int h = anchor_ready_h(model, minimizer, opts.descend.action);
  out.minimizer = h == static_cast<int>(minimizer.loop.h()) ? minimizer : refine_record(model, k, minimizer, h, opts.descend);
  const DiscreteLoop anchor = double_cover_anchor(out.minimizer.loop);
  std::vector<OrbitRecord> all{out.minimizer};
  for (int n = 1; n <= n_max; ++n) {
    out.minimax.push_back(minimax(model, k, n, anchor, out.minimizer, opts));
    const auto& nc = out.minimax.back().near_critical;
    if (nc && nc->action < 0.0) all.push_back(*nc);
  }
  out.orbits = dedup_orbits(model, all, t);
  return out;
}

}  // namespace tonelli
