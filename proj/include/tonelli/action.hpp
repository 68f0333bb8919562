#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <complex>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <vector>

#include "tonelli/errors.hpp"
#include "tonelli/flow.hpp"
#include "tonelli/model.hpp"
#include "tonelli/shoot.hpp"

namespace tonelli {

/// h torus points joined by Euler-Lagrange arcs of common duration tau; a broken orbit of
/// period h * tau.
struct DiscreteLoop {
  std::vector<Vec2> points;
  double tau = 0.0;

  std::size_t h() const { return points.size(); }
  double period() const { return tau * static_cast<double>(points.size()); }
};

struct ActionOptions {
  ShootOptions shoot{};
  double rho = -1.0;        ///< max distance between consecutive points; <= 0 means 0.45 * min side
  double epsilon = 2.0;     ///< upper bound for tau
  double tau_floor = -1.0;  ///< lower bound for tau; <= 0 means 1e-4 * epsilon
  double tol_crit = 1e-8;   ///< critical point threshold on the gradient norm
  double rank_rel_tol = 1e-6;

  double rho_for(const TorusConfig& t) const { return rho > 0.0 ? rho : 0.45 * t.min_side(); }
  double floor() const { return tau_floor > 0.0 ? tau_floor : 1e-4 * epsilon; }
};

inline bool loop_in_domain(const TorusConfig& torus, const DiscreteLoop& loop, const ActionOptions& opts) {
  if (loop.h() < 2) return false;
  if (!(loop.tau > opts.floor()) || !(loop.tau < opts.epsilon)) return false;
  const double rho = opts.rho_for(torus);
  for (std::size_t i = 0; i < loop.h(); ++i) {
    if (!(torus.distance(loop.points[i], loop.points[(i + 1) % loop.h()]) < rho)) return false;
  }
  return true;
}

inline void require_valid(const TorusConfig& torus, const DiscreteLoop& loop, const ActionOptions& opts) {
  if (loop.h() < 2) throw Error(ErrorKind::InvalidArgument, "a discrete loop needs at least two points");
  if (!loop_in_domain(torus, loop, opts)) {
    throw Error(ErrorKind::InvalidArgument, "loop outside the domain (consecutive distance >= rho or tau out of range)");
  }
}

/// Winding class: the summed shortest displacements form a lattice vector.
inline std::array<long, 2> winding(const TorusConfig& torus, const DiscreteLoop& loop) {
  Vec2 sum = Vec2::Zero();
  for (std::size_t i = 0; i < loop.h(); ++i) {
    sum += torus.displacement(loop.points[i], loop.points[(i + 1) % loop.h()]);
  }
  return {std::lround(sum[0] / torus.side(0)), std::lround(sum[1] / torus.side(1))};
}

/// Lifted polygon: point i+1 = point i + shortest displacement; h + 1 vertices.
inline std::vector<Vec2> unwrapped_polygon(const TorusConfig& torus, const DiscreteLoop& loop) {
  std::vector<Vec2> out{loop.points[0]};
  for (std::size_t i = 0; i < loop.h(); ++i) {
    out.push_back(out.back() + torus.displacement(loop.points[i], loop.points[(i + 1) % loop.h()]));
  }
  return out;
}

// ---------------------------------------------------------------------------

/// Gradient in the metric <<(v, s), (w, m)>> = h s m + sum <v_i, w_i>.
struct GradientVector {
  std::vector<Vec2> w;
  double mu = 0.0;

  double norm() const {
    double s = static_cast<double>(w.size()) * mu * mu;
    for (const auto& x : w) s += x.squaredNorm();
    return std::sqrt(s);
  }
  /// Coordinate differential (dS/dq_0, ..., dS/dq_{h-1}, dS/dtau).
  Eigen::VectorXd differential() const {
    Eigen::VectorXd g(2 * w.size() + 1);
    for (std::size_t i = 0; i < w.size(); ++i) g.segment<2>(2 * i) = w[i];
    g[2 * w.size()] = static_cast<double>(w.size()) * mu;
    return g;
  }
};

struct LoopEvaluation {
  std::vector<SegmentSolution> segments;
  double action = 0.0;
  GradientVector gradient;
  double length = 0.0;
};

/// First-order prediction of nu^- for moved endpoints and time, from a solved segment.
inline Vec2 predict_nu_minus(const TorusConfig& torus, const SegmentSolution& seg, const Vec2& q0, const Vec2& q1,
                             double tau) {
  const BoundaryDerivatives bd = boundary_derivatives(seg);
  const Vec2 dq0 = torus.displacement(seg.q0, q0);
  const Vec2 dq1 = (seg.q0 + dq0 + torus.displacement(q0, q1)) - seg.q1;
  return seg.nu_minus + bd.minus_q0 * dq0 + bd.minus_q1 * dq1 + bd.minus_tau * (tau - seg.tau);
}

/// Shoots every segment of the loop. A previous evaluation of a nearby loop with the same h,
/// if given, seeds the shooting through a first-order prediction.
inline LoopEvaluation evaluate_loop(const LagrangianModel& model, double k, const DiscreteLoop& loop,
                                    const ActionOptions& opts = {}, const LoopEvaluation* warm = nullptr) {
  require_valid(model.torus(), loop, opts);
  const std::size_t h = loop.h();
  const bool use_warm = warm != nullptr && warm->segments.size() == h;
  LoopEvaluation ev;
  ev.segments.reserve(h);
  for (std::size_t i = 0; i < h; ++i) {
    const Vec2& q0 = loop.points[i];
    const Vec2& q1 = loop.points[(i + 1) % h];
    std::optional<Vec2> guess;
    if (use_warm) guess = predict_nu_minus(model.torus(), warm->segments[i], q0, q1, loop.tau);
    try {
      try {
        ev.segments.push_back(fixed_time_minimizer(model, q0, q1, loop.tau, opts.shoot, guess));
      } catch (const Error&) {
        if (!guess) throw;
        ev.segments.push_back(fixed_time_minimizer(model, q0, q1, loop.tau, opts.shoot));
      }
    } catch (const Error& e) {
      throw Error(e.kind() == ErrorKind::Degenerate ? e.kind() : ErrorKind::SegmentFailure,
                  "segment " + std::to_string(i) + ": " + e.what());
    }
  }
  ev.action = loop.tau * static_cast<double>(h) * k;
  ev.gradient.w.resize(h);
  double mu = 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    const auto& seg = ev.segments[i];
    const auto& prev = ev.segments[(i + h - 1) % h];
    ev.action += seg.action;
    ev.length += seg.length;
    ev.gradient.w[i] = model.jet(loop.points[i], prev.nu_plus).Lv - model.jet(loop.points[i], seg.nu_minus).Lv;
    mu += k - seg.energy;
  }
  ev.gradient.mu = mu / static_cast<double>(h);
  return ev;
}

/// S_k(q, tau) = tau h k + sum of segment actions.
inline double discrete_action(const LagrangianModel& model, double k, const DiscreteLoop& loop,
                              const ActionOptions& opts = {}) {
  return evaluate_loop(model, k, loop, opts).action;
}

inline GradientVector discrete_gradient(const LagrangianModel& model, double k, const DiscreteLoop& loop,
                                        const ActionOptions& opts = {}) {
  return evaluate_loop(model, k, loop, opts).gradient;
}

/// Coordinate matrix of the second derivative of S_k, ordered (q_0, ..., q_{h-1}, tau).
/// Exact away from critical points too; at critical points it is the Hessian bilinear form.
inline Eigen::MatrixXd hessian_matrix(const LagrangianModel& model, double k, const DiscreteLoop& loop,
                                      const LoopEvaluation& ev) {
  (void)k;
  const int h = static_cast<int>(loop.h());
  const int n = 2 * h + 1;
  const int T = 2 * h;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
  std::vector<BoundaryDerivatives> bd;
  bd.reserve(h);
  for (const auto& s : ev.segments) bd.push_back(boundary_derivatives(s));

  for (int i = 0; i < h; ++i) {
    const int ip = (i + 1) % h, im = (i + h - 1) % h;
    const auto& seg = ev.segments[i];
    const auto& prev = ev.segments[im];
    const Jet jp = model.jet(loop.points[i], prev.nu_plus);
    const Jet jm = model.jet(loop.points[i], seg.nu_minus);
    H.block<2, 2>(2 * i, 2 * im) += jp.Lvv * bd[im].plus_q0;
    H.block<2, 2>(2 * i, 2 * i) += jp.Lvq + jp.Lvv * bd[im].plus_q1 - jm.Lvq - jm.Lvv * bd[i].minus_q0;
    H.block<2, 2>(2 * i, 2 * ip) -= jm.Lvv * bd[i].minus_q1;
    H.block<2, 1>(2 * i, T) += jp.Lvv * bd[im].plus_tau - jm.Lvv * bd[i].minus_tau;

    const auto eg = energy_gradients(jm, seg.nu_minus);
    H.block<1, 2>(T, 2 * i) -= (eg.Eq + bd[i].minus_q0.transpose() * eg.Ev).transpose();
    H.block<1, 2>(T, 2 * ip) -= (bd[i].minus_q1.transpose() * eg.Ev).transpose();
    H(T, T) -= eg.Ev.dot(bd[i].minus_tau);
  }
  return H;
}

// ---------------------------------------------------------------------------

struct IndexNullity {
  int ind = 0;
  int nul = 0;
  /// smallest |eigenvalue| outside the kernel divided by the threshold; audit value for borderline
  /// verdicts
  double gap = 0.0;
  double threshold = 0.0;
};

inline IndexNullity index_nullity(const Eigen::VectorXd& eigenvalues, double tol_rank) {
  IndexNullity r;
  r.threshold = tol_rank;
  double smallest_outside = std::numeric_limits<double>::infinity();
  for (double l : eigenvalues) {
    if (l < -tol_rank) ++r.ind;
    else if (std::abs(l) <= tol_rank) ++r.nul;
    if (std::abs(l) > tol_rank) smallest_outside = std::min(smallest_outside, std::abs(l));
  }
  r.gap = tol_rank > 0.0 ? smallest_outside / tol_rank : smallest_outside;
  return r;
}

inline double relative_rank_tol(const Eigen::VectorXd& eigenvalues, double rel) {
  return rel * std::max(eigenvalues.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
}

/// Counts negative / zero eigenvalues of a symmetric matrix; tol_rank < 0 selects
/// 1e-6 * max |eigenvalue|.
inline IndexNullity index_nullity(const Eigen::MatrixXd& matrix, double tol_rank = -1.0) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (matrix + matrix.transpose()),
                                                    Eigen::EigenvaluesOnly);
  const Eigen::VectorXd ev = es.eigenvalues();
  return index_nullity(ev, tol_rank < 0.0 ? relative_rank_tol(ev, 1e-6) : tol_rank);
}

struct SpectralReport {
  Eigen::MatrixXd hessian_full;        ///< (2h+1) x (2h+1)
  Eigen::MatrixXd hessian_restricted;  ///< 2h x 2h, tau variation frozen
  Eigen::VectorXd eigenvalues_full;
  Eigen::VectorXd eigenvalues_restricted;
  int ind_H = 0, nul_H = 0, ind_h = 0, nul_h = 0;
  double gap_H = 0.0, gap_h = 0.0;
  double tol_rank_H = 0.0, tol_rank_h = 0.0;
  double asymmetry = 0.0;  ///< max |H - H^T| before symmetrization
  Mat4 monodromy = Mat4::Identity();
  std::vector<std::complex<double>> monodromy_eigenvalues;
};

inline std::vector<std::complex<double>> eigenvalues4(const Mat4& p) {
  Eigen::EigenSolver<Mat4> es(p, false);
  std::vector<std::complex<double>> out(es.eigenvalues().data(), es.eigenvalues().data() + 4);
  std::sort(out.begin(), out.end(), [](auto a, auto b) {
    return std::arg(a) != std::arg(b) ? std::arg(a) < std::arg(b) : std::abs(a) < std::abs(b);
  });
  return out;
}

inline void require_critical(const LoopEvaluation& ev, const ActionOptions& opts) {
  const double g = ev.gradient.norm();
  if (!(g <= opts.tol_crit)) {
    throw Error(ErrorKind::NotCritical, "gradient norm " + std::to_string(g) + " exceeds tol_crit");
  }
}

/// dphi^{h tau} at the initial state (q_0, nu^-_0) of a critical loop.
inline Propagator monodromy(const LagrangianModel& model, double k, const DiscreteLoop& loop,
                            const ActionOptions& opts = {}) {
  const auto ev = evaluate_loop(model, k, loop, opts);
  require_critical(ev, opts);
  return linearized_flow(model, {loop.points[0], ev.segments[0].nu_minus}, loop.period(), opts.shoot.flow);
}

inline SpectralReport spectral_report(const LagrangianModel& model, double k, const DiscreteLoop& loop,
                                      const LoopEvaluation& ev, const ActionOptions& opts,
                                      bool with_monodromy = true) {
  SpectralReport rep;
  Eigen::MatrixXd H = hessian_matrix(model, k, loop, ev);
  rep.asymmetry = (H - H.transpose()).cwiseAbs().maxCoeff();
  H = 0.5 * (H + H.transpose());
  const int n2 = 2 * static_cast<int>(loop.h());
  rep.hessian_full = H;
  rep.hessian_restricted = H.topLeftCorner(n2, n2);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> full(rep.hessian_full, Eigen::EigenvaluesOnly);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> restricted(rep.hessian_restricted, Eigen::EigenvaluesOnly);
  rep.eigenvalues_full = full.eigenvalues();
  rep.eigenvalues_restricted = restricted.eigenvalues();
  const auto a = index_nullity(rep.eigenvalues_full, relative_rank_tol(rep.eigenvalues_full, opts.rank_rel_tol));
  const auto b = index_nullity(rep.eigenvalues_restricted,
                               relative_rank_tol(rep.eigenvalues_restricted, opts.rank_rel_tol));
  rep.ind_H = a.ind;
  rep.nul_H = a.nul;
  rep.gap_H = a.gap;
  rep.tol_rank_H = a.threshold;
  rep.ind_h = b.ind;
  rep.nul_h = b.nul;
  rep.gap_h = b.gap;
  rep.tol_rank_h = b.threshold;
  if (with_monodromy) {
    rep.monodromy =
        linearized_flow(model, {loop.points[0], ev.segments[0].nu_minus}, loop.period(), opts.shoot.flow).matrix;
    rep.monodromy_eigenvalues = eigenvalues4(rep.monodromy);
  }
  return rep;
}

/// Hessians H and h at a critical point with index/nullity counts and the monodromy spectrum.
inline SpectralReport discrete_hessian(const LagrangianModel& model, double k, const DiscreteLoop& loop,
                                       const ActionOptions& opts = {}) {
  const auto ev = evaluate_loop(model, k, loop, opts);
  require_critical(ev, opts);
  return spectral_report(model, k, loop, ev, opts);
}

// ---------------------------------------------------------------------------

/// m-fold cover: points repeated m times, same tau.
inline DiscreteLoop iterate(const DiscreteLoop& loop, int m) {
  if (m < 1) throw Error(ErrorKind::InvalidArgument, "iterate: m must be >= 1");
  DiscreteLoop out;
  out.tau = loop.tau;
  out.points.reserve(loop.h() * static_cast<std::size_t>(m));
  for (int r = 0; r < m; ++r) out.points.insert(out.points.end(), loop.points.begin(), loop.points.end());
  return out;
}

/// dim_C ker(P - lambda I) by singular values below tol * max(1, |P|).
inline int complex_kernel_dim(const Mat4& p, std::complex<double> lambda, double tol) {
  const Eigen::Matrix4cd m = p.cast<std::complex<double>>() - lambda * Eigen::Matrix4cd::Identity();
  Eigen::JacobiSVD<Eigen::Matrix4cd> svd(m);
  const double scale = std::max(1.0, p.norm());
  int dim = 0;
  for (int i = 0; i < 4; ++i) dim += svd.singularValues()[i] <= tol * scale ? 1 : 0;
  return dim;
}

/// dim ker(P^m - I) as the sum over m-th roots of unity lambda of dim_C ker(P - lambda I).
inline int nullity_via_monodromy(const Mat4& p, int m, double tol = 1e-6) {
  if (m < 1) throw Error(ErrorKind::InvalidArgument, "nullity_via_monodromy: m must be >= 1");
  int total = 0;
  for (int j = 0; j < m; ++j) {
    total += complex_kernel_dim(p, std::polar(1.0, 2.0 * M_PI * j / m), tol);
  }
  return total;
}

struct NullityClass {
  int representative = 0;  ///< smallest member
  int nullity = 0;
  std::vector<int> members;
  std::vector<std::complex<double>> roots;  ///< eigenvalues of P that are m-th roots of unity
};

/// Partition of {1..m_max} by the set of eigenvalues of P that are m-th roots of unity.
inline std::vector<NullityClass> nullity_partition(const Mat4& p, int m_max, double tol = 1e-6) {
  const auto eig = eigenvalues4(p);
  // distinct unit-circle eigenvalues, clustered
  std::vector<std::complex<double>> unit;
  for (const auto& l : eig) {
    if (std::abs(std::abs(l) - 1.0) > 1e-4) continue;
    bool seen = false;
    for (const auto& u : unit) seen = seen || std::abs(u - l) < 1e-4;
    if (!seen) unit.push_back(l);
  }
  std::map<std::vector<int>, NullityClass> classes;
  std::vector<std::vector<int>> order;
  for (int m = 1; m <= m_max; ++m) {
    std::vector<int> key;
    for (std::size_t i = 0; i < unit.size(); ++i) {
      if (std::abs(std::pow(unit[i], m) - 1.0) < 1e-4 * std::max(1, m)) key.push_back(static_cast<int>(i));
    }
    auto it = classes.find(key);
    if (it == classes.end()) {
      NullityClass c;
      c.representative = m;
      c.nullity = nullity_via_monodromy(p, m, tol);
      for (int i : key) c.roots.push_back(unit[i]);
      it = classes.emplace(key, std::move(c)).first;
      order.push_back(key);
    }
    it->second.members.push_back(m);
  }
  std::vector<NullityClass> out;
  for (const auto& key : order) out.push_back(classes.at(key));
  return out;
}

// ---------------------------------------------------------------------------

/// Constants of the linear lower bound ind(h_m) >= floor(m / (m0 m1 + 1)) at a critical loop.
/// m0 is the first iterate with a negative direction v of h_{m0} (delta1 = h_{m0}(v, v) < 0);
/// delta2 is the boundary correction picked up when v is cut open and padded with zeros, so that
/// m1 copies of v placed side by side have h-value m1 delta1 + delta2.
struct GrowthFloor {
  int m0 = 0;  ///< 0 when h_m has no negative direction for m <= m_max
  int m1 = 0;
  double delta1 = 0.0;
  double delta2 = 0.0;

  int operator()(int m) const { return m0 == 0 ? 0 : m / (m0 * m1 + 1); }
};

inline GrowthFloor index_growth_floor(const LagrangianModel& model, double k, const DiscreteLoop& loop,
                                      const ActionOptions& opts = {}, int m_max = 8) {
  auto restricted = [&](int m) {
    const DiscreteLoop lm = iterate(loop, m);
    const Eigen::MatrixXd H = hessian_matrix(model, k, lm, evaluate_loop(model, k, lm, opts));
    const long n = 2 * static_cast<long>(lm.h());
    return Eigen::MatrixXd(0.5 * (H.topLeftCorner(n, n) + H.topLeftCorner(n, n).transpose()));
  };
  GrowthFloor g;
  for (int m0 = 1; m0 <= m_max; ++m0) {
    const Eigen::MatrixXd h0 = restricted(m0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h0);
    const double tol = relative_rank_tol(es.eigenvalues(), opts.rank_rel_tol);
    if (!(es.eigenvalues()[0] < -tol)) continue;
    const Eigen::VectorXd v = es.eigenvectors().col(0);
    g.m0 = m0;
    g.delta1 = v.dot(h0 * v);
    const Eigen::MatrixXd h1 = restricted(m0 + 1);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(h1.rows());
    w.head(v.size()) = v;
    g.delta2 = w.dot(h1 * w) - g.delta1;
    // strict inequality m1 delta1 + delta2 < 0 is what the construction needs
    g.m1 = std::max(1, static_cast<int>(std::floor(std::abs(g.delta2 / g.delta1))) + 1);
    return g;
  }
  return g;
}

// ---------------------------------------------------------------------------

/// h points sampled along the orbit through s0 at times i * period / h.
inline DiscreteLoop sample_orbit(const LagrangianModel& model, const TangentState& s0, double period, int h,
                                 const FlowOptions& flow = {}) {
  DiscreteLoop loop;
  loop.tau = period / h;
  Eigen::Matrix<double, 6, 1> x;
  x << s0.q, s0.v, 0.0, 0.0;
  DormandPrince<6> dp(flow);
  double t = 0.0;
  for (int i = 0; i < h; ++i) {
    const double target = loop.tau * i;
    dp.integrate(detail::BaseRhs{&model}, x, t, target);
    t = target;
    loop.points.push_back(model.torus().wrap(x.segment<2>(0)));
  }
  return loop;
}

/// State (q_0, nu^-_0) at the start of a loop.
inline TangentState initial_state(const LagrangianModel& model, const DiscreteLoop& loop, const ActionOptions& opts = {}) {
  const auto seg = fixed_time_minimizer(model, loop.points[0], loop.points[1 % loop.h()], loop.tau, opts.shoot);
  return {loop.points[0], seg.nu_minus};
}

}  // namespace tonelli
