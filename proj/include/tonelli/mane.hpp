#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <optional>
#include <vector>

#include "tonelli/action.hpp"
#include "tonelli/errors.hpp"
#include "tonelli/levels.hpp"
#include "tonelli/model.hpp"
#include "tonelli/parallel.hpp"
#include "tonelli/search.hpp"

namespace tonelli {

// ---------------------------------------------------------------------------
// Upper bounds from Hamilton-Jacobi subsolutions.
//
// For every smooth u on the torus and constant covector pbar,
//   c <= max_q H(q, pbar + du(q)),
// so any member of a finite family gives a rigorous bound once the maximum over q is certified.

/// One Fourier mode of the subsolution: a cos(phi) + b sin(phi), phi = 2 pi (m1 q1 / s1 + m2 q2 / s2).
struct FourierMode {
  int m1 = 0, m2 = 0;
  double a = 0.0, b = 0.0;
};

struct UpperCertificate {
  int family_size = 0;
  Vec2 pbar = Vec2::Zero();
  std::vector<FourierMode> modes;
  int grid = 256;
  double grid_max = 0.0;  ///< largest sampled value of H(q, pbar + du)
  double slack = 0.0;     ///< added to grid_max so the bound covers the whole torus
};

struct UpperOptions {
  int family_size = 4;
  int opt_grid = 64;    ///< sample grid used while optimizing the family parameters
  int cert_grid = 256;  ///< sample grid used for the certified maximum
  int iterations = 60;  ///< descent iterations per smoothing level
  std::vector<double> sharpness{4.0, 16.0, 64.0, 256.0, 1024.0};
};

/// Modes with max(|m1|, |m2|) <= n in a half-plane (one of each +-m pair).
inline std::vector<std::array<int, 2>> fourier_modes(int n) {
  std::vector<std::array<int, 2>> out;
  for (int order = 1; order <= n; ++order) {
    for (int m1 = 0; m1 <= order; ++m1) {
      for (int m2 = -order; m2 <= order; ++m2) {
        if (std::max(std::abs(m1), std::abs(m2)) != order) continue;
        if (m1 == 0 && m2 <= 0) continue;
        out.push_back({m1, m2});
      }
    }
  }
  return out;
}

namespace detail {

/// Precomputed trigonometric basis of a family on a sample grid.
class SubsolutionGrid {
 public:
  SubsolutionGrid(const TorusConfig& torus, const std::vector<std::array<int, 2>>& modes, int n)
      : torus_(torus), modes_(modes), n_(n) {
    const std::size_t pts = static_cast<std::size_t>(n) * n;
    cs_.resize(pts * modes.size());
    sn_.resize(pts * modes.size());
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const Vec2 q = point(i, j);
        for (std::size_t m = 0; m < modes.size(); ++m) {
          const double phi = wave(m).dot(q);
          cs_[index(i, j) * modes.size() + m] = std::cos(phi);
          sn_[index(i, j) * modes.size() + m] = std::sin(phi);
        }
      }
    }
  }

  Vec2 point(int i, int j) const { return Vec2(torus_.side(0) * i / n_, torus_.side(1) * j / n_); }
  std::size_t index(int i, int j) const { return static_cast<std::size_t>(i) * n_ + j; }
  std::size_t size() const { return static_cast<std::size_t>(n_) * n_; }
  int n() const { return n_; }

  Vec2 wave(std::size_t m) const {
    return Vec2(2.0 * M_PI * modes_[m][0] / torus_.side(0), 2.0 * M_PI * modes_[m][1] / torus_.side(1));
  }

  /// Covector pbar + du and the Hessian of u at grid point idx; theta = (pbar, a_1, b_1, a_2, ...).
  void covector(const Eigen::VectorXd& theta, std::size_t idx, Vec2& p, Mat2& d2u) const {
    p = theta.head<2>();
    d2u.setZero();
    for (std::size_t m = 0; m < modes_.size(); ++m) {
      const double a = theta[2 + 2 * m], b = theta[3 + 2 * m];
      if (a == 0.0 && b == 0.0) continue;
      const double c = cs_[idx * modes_.size() + m], s = sn_[idx * modes_.size() + m];
      const Vec2 kv = wave(m);
      p += (-a * s + b * c) * kv;
      d2u -= (a * c + b * s) * kv * kv.transpose();
    }
  }

  /// d p / d theta at grid point idx, as a 2 x dim matrix.
  Eigen::MatrixXd covector_jacobian(std::size_t idx) const {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2, 2 + 2 * static_cast<long>(modes_.size()));
    J(0, 0) = J(1, 1) = 1.0;
    for (std::size_t m = 0; m < modes_.size(); ++m) {
      const double c = cs_[idx * modes_.size() + m], s = sn_[idx * modes_.size() + m];
      J.col(2 + 2 * static_cast<long>(m)) = -s * wave(m);
      J.col(3 + 2 * static_cast<long>(m)) = c * wave(m);
    }
    return J;
  }

 private:
  TorusConfig torus_;
  std::vector<std::array<int, 2>> modes_;
  int n_;
  std::vector<double> cs_, sn_;
};

struct GridValues {
  std::vector<double> f;    ///< H(q, pbar + du(q))
  std::vector<Vec2> v;      ///< velocity Legendre-dual to the covector
  std::vector<Vec2> grad;   ///< gradient in q of the composite function
};

inline GridValues grid_values(const LagrangianModel& model, const SubsolutionGrid& g, const Eigen::VectorXd& theta,
                              bool with_grad) {
  GridValues out;
  out.f.resize(g.size());
  out.v.resize(g.size());
  if (with_grad) out.grad.resize(g.size());
  for (int i = 0; i < g.n(); ++i) {
    for (int j = 0; j < g.n(); ++j) {
      const std::size_t idx = g.index(i, j);
      Vec2 p;
      Mat2 d2u;
      g.covector(theta, idx, p, d2u);
      const Vec2 q = g.point(i, j);
      const auto lr = legendre(model, q, p);
      out.f[idx] = lr.H;
      out.v[idx] = lr.v;
      // d/dq H(q, p(q)) = H_q + D^2u H_p = -L_q(q, v) + D^2u v
      if (with_grad) out.grad[idx] = -model.jet(q, lr.v).Lq + d2u * lr.v;
    }
  }
  return out;
}

/// Rigorous maximum over the torus from grid samples: for q in a cell with nearest corner c at
/// distance <= delta, f(q) <= f(c) + delta |grad f(c)| + M delta^2, where M bounds the second
/// derivative. M is estimated from gradient differences between neighbours and inflated by 2.
inline std::pair<double, double> certified_max(const SubsolutionGrid& g, const GridValues& gv) {
  const int n = g.n();
  const Vec2 h = g.point(1, 1) - g.point(0, 0);
  const double delta = 0.5 * h.norm();
  double m_est = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const auto idx = g.index(i, j);
      m_est = std::max(m_est, (gv.grad[g.index((i + 1) % n, j)] - gv.grad[idx]).norm() / h[0]);
      m_est = std::max(m_est, (gv.grad[g.index(i, (j + 1) % n)] - gv.grad[idx]).norm() / h[1]);
    }
  }
  double fmax = -std::numeric_limits<double>::infinity();
  double bound = fmax;
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    fmax = std::max(fmax, gv.f[idx]);
    bound = std::max(bound, gv.f[idx] + delta * gv.grad[idx].norm());
  }
  bound += 2.0 * m_est * delta * delta;
  return {fmax, bound - fmax};
}

inline Eigen::VectorXd embed(const Eigen::VectorXd& theta, std::size_t dim) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<long>(dim));
  out.head(theta.size()) = theta;
  return out;
}

/// Smoothed maximum (1/beta) log mean exp(beta f) and its gradient in theta.
inline double smoothed_max(const LagrangianModel& model, const SubsolutionGrid& g, const Eigen::VectorXd& theta,
                           double beta, Eigen::VectorXd* grad) {
  const GridValues gv = grid_values(model, g, theta, false);
  const double fmax = *std::max_element(gv.f.begin(), gv.f.end());
  double z = 0.0;
  std::vector<double> w(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) z += (w[i] = std::exp(beta * (gv.f[i] - fmax)));
  if (grad) {
    grad->setZero(theta.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (w[i] < 1e-14 * z) continue;
      *grad += (w[i] / z) * (g.covector_jacobian(i).transpose() * gv.v[i]);
    }
  }
  return fmax + std::log(z / static_cast<double>(g.size())) / beta;
}

}  // namespace detail

struct UpperBound {
  double value = 0.0;
  UpperCertificate certificate;
};

/// Recomputes the certified maximum of a stored subsolution.
inline double evaluate_upper_certificate(const LagrangianModel& model, const UpperCertificate& c) {
  std::vector<std::array<int, 2>> modes;
  Eigen::VectorXd theta(2 + 2 * static_cast<long>(c.modes.size()));
  theta.head<2>() = c.pbar;
  for (std::size_t m = 0; m < c.modes.size(); ++m) {
    modes.push_back({c.modes[m].m1, c.modes[m].m2});
    theta[2 + 2 * static_cast<long>(m)] = c.modes[m].a;
    theta[3 + 2 * static_cast<long>(m)] = c.modes[m].b;
  }
  const detail::SubsolutionGrid g(model.torus(), modes, c.grid);
  const auto [fmax, slack] = detail::certified_max(g, detail::grid_values(model, g, theta, true));
  return fmax + slack;
}

/// Minimizes max_q H(q, pbar + du(q)) over Fourier families of growing order 0..family_size.
/// Each order is warm-started from the previous optimum, and the smallest certified value is
/// kept, so the bound never increases with family_size.
inline UpperBound c_upper_bound(const LagrangianModel& model, const UpperOptions& opts = {}) {
  if (opts.family_size < 0) throw Error(ErrorKind::InvalidArgument, "family size must be >= 0");
  UpperBound best;
  best.value = std::numeric_limits<double>::infinity();
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(2);
  for (int order = 0; order <= opts.family_size; ++order) {
    const auto modes = fourier_modes(order);
    theta = detail::embed(theta, 2 + 2 * modes.size());
    const detail::SubsolutionGrid g(model.torus(), modes, opts.opt_grid);
    const auto f0 = detail::grid_values(model, g, theta, false).f;
    const double spread = *std::max_element(f0.begin(), f0.end()) - *std::min_element(f0.begin(), f0.end());
    if (spread > 1e-12) {
      for (double s : opts.sharpness) {
        const double beta = s / spread;
        Eigen::VectorXd grad;
        double f = detail::smoothed_max(model, g, theta, beta, &grad);
        double step = 1.0 / (beta * std::max(grad.squaredNorm(), 1e-300)) * 0.1;
        for (int it = 0; it < opts.iterations && grad.norm() > 1e-12; ++it) {
          bool moved = false;
          for (int ls = 0; ls < 30; ++ls, step *= 0.5) {
            const Eigen::VectorXd trial = theta - step * grad;
            Eigen::VectorXd gt;
            const double ft = detail::smoothed_max(model, g, trial, beta, &gt);
            if (ft <= f - 1e-4 * step * grad.squaredNorm()) {
              theta = trial, f = ft, grad = gt;
              moved = true;
              break;
            }
          }
          if (!moved) break;
          step *= 2.0;
        }
      }
    }
    UpperCertificate cert;
    cert.family_size = order;
    cert.pbar = theta.head<2>();
    for (std::size_t m = 0; m < modes.size(); ++m) {
      cert.modes.push_back({modes[m][0], modes[m][1], theta[2 + 2 * static_cast<long>(m)],
                            theta[3 + 2 * static_cast<long>(m)]});
    }
    cert.grid = opts.cert_grid;
    const detail::SubsolutionGrid gc(model.torus(), modes, opts.cert_grid);
    const auto [fmax, slack] = detail::certified_max(gc, detail::grid_values(model, gc, theta, true));
    cert.grid_max = fmax;
    cert.slack = slack;
    if (fmax + slack < best.value) {
      best.value = fmax + slack;
      best.certificate = cert;
    } else {
      // restart the next order from the best certified parameters
      theta = Eigen::VectorXd::Zero(2 + 2 * static_cast<long>(modes.size()));
      theta.head<2>() = best.certificate.pbar;
      for (std::size_t m = 0; m < best.certificate.modes.size(); ++m) {
        theta[2 + 2 * static_cast<long>(m)] = best.certificate.modes[m].a;
        theta[3 + 2 * static_cast<long>(m)] = best.certificate.modes[m].b;
      }
    }
    best.certificate.family_size = order;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Lower bounds from negative-action contractible loops.

struct LowerCertificate {
  double k = 0.0;
  DiscreteLoop loop;
  double action = 0.0;
};

struct LowerOptions {
  ActionOptions action{};
  SeedOptions seeds{};
  int candidates = 6;     ///< seed loops carried to higher energies
  int descend_iter = 40;  ///< minimization iterations on each candidate at the lowest energy
};

struct LowerBound {
  double value = 0.0;
  std::optional<LowerCertificate> certificate;
};

/// S_k of the stored loop, recomputed from the model alone; negative and contractible means valid.
inline bool verify_lower_certificate(const LagrangianModel& model, const LowerCertificate& c,
                                     const ActionOptions& opts = {}) {
  if (winding(model.torus(), c.loop) != std::array<long, 2>{0, 0}) return false;
  try {
    return discrete_action(model, c.k, c.loop, opts) < 0.0;
  } catch (const Error&) {
    return false;
  }
}

/// Largest grid energy with an explicit contractible loop of negative action. Loops are seeded at
/// the lowest grid energy above e0, minimized there, and then re-timed at each higher energy
/// (S_k grows with k for a fixed loop, so higher energies only need a search over tau).
inline LowerBound c_lower_bound(const LagrangianModel& model, std::vector<double> k_grid, const LowerOptions& opts = {}) {
  LowerBound out;
  out.value = e0(model);
  std::sort(k_grid.begin(), k_grid.end());
  k_grid.erase(std::remove_if(k_grid.begin(), k_grid.end(), [&](double k) { return !(k > out.value); }), k_grid.end());
  if (k_grid.empty()) return out;

  const double k_lo = k_grid.front();
  const auto seeds = loop_seeds(model, k_lo, opts.action, opts.seeds);
  std::vector<DiscreteLoop> pool;
  for (const auto& s : seeds) {
    if (!(s.action < 0.0) || static_cast<int>(pool.size()) >= opts.candidates) continue;
    pool.push_back(s.loop);
  }
  if (pool.empty()) return out;
  DescendOptions d;
  d.action = opts.action;
  d.max_iter = opts.descend_iter;
  d.spectrum = false;
  parallel_for(pool.size(), [&](std::size_t i) {
    try {
      pool[i] = descend(model, k_lo, pool[i], d).loop;
    } catch (const Error&) {
      // an unconverged descent still leaves the seed, which is negative at k_lo
    }
  });

  for (auto it = k_grid.rbegin(); it != k_grid.rend(); ++it) {
    const double k = *it;
    for (const auto& loop : pool) {
      const double tau_hi = opts.action.epsilon * 0.99;
      const double tau_lo = opts.action.floor() * 1.01;
      auto c = optimize_tau(model, k, loop, tau_lo, tau_hi, opts.action, 40);
      if (c.action < 0.0) {
        out.value = k;
        out.certificate = LowerCertificate{k, c.loop, c.action};
        return out;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

struct ManeEstimate {
  double e0 = 0.0;
  Vec2 e0_argmax = Vec2::Zero();
  double c_upper = 0.0;
  UpperCertificate upper;
  double c_lower = 0.0;
  std::optional<LowerCertificate> lower;
};

inline ManeEstimate mane_estimate(const LagrangianModel& model, const std::vector<double>& k_grid,
                                  const UpperOptions& up = {}, const LowerOptions& low = {}) {
  ManeEstimate m;
  const auto e = e0_with_argmax(model);
  m.e0 = e.value;
  m.e0_argmax = e.argmax;
  const auto u = c_upper_bound(model, up);
  m.c_upper = u.value;
  m.upper = u.certificate;
  const auto l = c_lower_bound(model, k_grid, low);
  m.c_lower = l.value;
  m.lower = l.certificate;
  return m;
}

struct ManeCheck {
  bool upper_ok = false;
  bool lower_ok = false;
  bool sandwich_ok = false;
};

/// Re-validates an estimate from the model and the embedded certificates only.
inline ManeCheck verify_estimate(const LagrangianModel& model, const ManeEstimate& m, const ActionOptions& opts = {}) {
  ManeCheck c;
  c.upper_ok = evaluate_upper_certificate(model, m.upper) <= m.c_upper * (1.0 + 1e-12) + 1e-12;
  c.lower_ok = m.lower ? (verify_lower_certificate(model, *m.lower, opts) && m.lower->k == m.c_lower)
                       : std::abs(m.c_lower - m.e0) <= 1e-12;
  c.sandwich_ok = m.e0 <= m.c_lower + 1e-12 && m.c_lower <= m.c_upper + 1e-6 && m.e0 <= m.c_upper + 1e-12;
  return c;
}

}  // namespace tonelli
