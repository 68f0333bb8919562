#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "tonelli/model.hpp"

namespace tonelli {

struct E0Result {
  double value = 0.0;
  Vec2 argmax = Vec2::Zero();
};

/// e0 = max_q E(q, 0) = max_q -L(q, 0): grid search followed by a safeguarded Newton polish of
/// the best grid points.
inline E0Result e0_with_argmax(const LagrangianModel& model, int grid = 128) {
  const auto& t = model.torus();
  struct Cand {
    double f;
    Vec2 q;
  };
  std::vector<Cand> cands;
  cands.reserve(static_cast<std::size_t>(grid) * grid);
  for (int i = 0; i < grid; ++i) {
    for (int j = 0; j < grid; ++j) {
      const Vec2 q(t.side(0) * i / grid, t.side(1) * j / grid);
      cands.push_back({-model.L(q, Vec2::Zero()), q});
    }
  }
  const std::size_t keep = std::min<std::size_t>(8, cands.size());
  std::partial_sort(cands.begin(), cands.begin() + static_cast<long>(keep), cands.end(),
                    [](const Cand& a, const Cand& b) { return a.f > b.f; });
  E0Result best{cands[0].f, cands[0].q};
  const double step_cap = 0.5 * t.min_side() / grid;
  for (std::size_t c = 0; c < keep; ++c) {
    Vec2 q = cands[c].q;
    double f = cands[c].f;
    for (int it = 0; it < 50; ++it) {
      const Jet j = model.jet(q, Vec2::Zero());
      const Vec2 g = -j.Lq;
      const Mat2 hess = -j.Lqq;
      if (g.norm() < 1e-14) break;
      Vec2 d;
      Eigen::SelfAdjointEigenSolver<Mat2> es(hess);
      if (es.eigenvalues().maxCoeff() < 0.0) d = -hess.ldlt().solve(g);
      else d = g;
      if (d.norm() > step_cap) d *= step_cap / d.norm();
      double a = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 40; ++ls, a *= 0.5) {
        const double fn = -model.L(q + a * d, Vec2::Zero());
        if (fn > f) {
          q += a * d;
          f = fn;
          moved = true;
          break;
        }
      }
      if (!moved) break;
    }
    if (f > best.value) best = {f, t.wrap(q)};
  }
  return best;
}

inline double e0(const LagrangianModel& model, int grid = 128) { return e0_with_argmax(model, grid).value; }

/// Total variation of the exterior derivative of theta = L_v(q, 0) dq over the torus, by the
/// midpoint rule: integral of |d1 theta_2 - d2 theta_1|.
inline double dtheta_total_variation(const LagrangianModel& model, int grid = 1024) {
  const auto& t = model.torus();
  const double dA = t.area() / (static_cast<double>(grid) * grid);
  double sum = 0.0;
  for (int i = 0; i < grid; ++i) {
    for (int j = 0; j < grid; ++j) {
      const Vec2 q(t.side(0) * (i + 0.5) / grid, t.side(1) * (j + 0.5) / grid);
      const Mat2 m = model.jet(q, Vec2::Zero()).Lvq;
      sum += std::abs(m(1, 0) - m(0, 1));
    }
  }
  return sum * dA;
}

}  // namespace tonelli
