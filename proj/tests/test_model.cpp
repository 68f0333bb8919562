#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

using namespace tonelli;

namespace {

Vec2 random_point(const TorusConfig& t, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return Vec2(u(rng) * t.side(0), u(rng) * t.side(1));
}

Vec2 random_velocity(std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  return Vec2(n(rng), n(rng));
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST(Torus, DistanceExamples) {
  EXPECT_NEAR(TorusConfig(1, 1).distance({0, 0}, {0.9, 0}), 0.1, 1e-15);
  EXPECT_EQ(TorusConfig(1, 1).distance({0.3, 0.7}, {0.3, 0.7}), 0.0);
  EXPECT_NEAR(torus_distance(TorusConfig(2 * M_PI, 2 * M_PI), {0, 0}, {M_PI, M_PI}), M_PI * std::sqrt(2.0), 1e-14);
}

TEST(Torus, RejectsNonPositiveSides) {
  EXPECT_THROW(TorusConfig(0.0, 1.0), Error);
  EXPECT_THROW(TorusConfig(1.0, -2.0), Error);
  EXPECT_THROW(TorusConfig(1.0, std::numeric_limits<double>::infinity()), Error);
}

TEST(Torus, WrapAndMetricAxioms) {
  const TorusConfig t(1.0, 2.5);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int i = 0; i < 500; ++i) {
    const Vec2 a(u(rng), u(rng)), b(u(rng), u(rng)), c(u(rng), u(rng));
    const Vec2 w = t.wrap(a);
    for (int j = 0; j < 2; ++j) {
      EXPECT_GE(w[j], 0.0);
      EXPECT_LT(w[j], t.side(j));
    }
    EXPECT_NEAR(t.distance(a, b), t.distance(b, a), 1e-12);
    EXPECT_LE(t.distance(a, c), t.distance(a, b) + t.distance(b, c) + 1e-12);
    EXPECT_NEAR(t.distance(a, w), 0.0, 1e-12);
  }
}

TEST(Energy, Examples) {
  const auto kin = kinetic_model();
  EXPECT_DOUBLE_EQ(energy(kin, {{0, 0}, {1, 0}}), 0.5);

  const auto mech = oracle::mechanical_fixture();
  const TrigSeries V(oracle::mechanical_potential(), mech.torus());
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const Vec2 q = random_point(mech.torus(), rng), v = random_velocity(rng, 1.0);
    EXPECT_NEAR(energy(mech, {q, v}), 0.5 * v.squaredNorm() + V(q).f, 1e-13);
  }
}

TEST(Energy, ConstantAlongCounterexampleOrbit) {
  const CounterexampleParams p;
  const auto model = counterexample_model(p);
  for (const auto& orbit : reference_orbits(p, 0.25)) {
    for (int i = 0; i < 20; ++i) EXPECT_NEAR(energy(model, orbit.state(orbit.period * i / 20.0)), 0.25, 1e-13);
  }
}

TEST(EnergyGradients, Examples) {
  const auto g = energy_gradients(kinetic_model(), {{0, 0}, {2, 0}});
  EXPECT_TRUE(g.Eq.isZero());
  EXPECT_TRUE(g.Ev.isApprox(Vec2(2, 0)));

  const auto mech = mechanical_model(TorusConfig(2 * M_PI, 2 * M_PI), {{1.0, 1, 0, 0.0}});
  const auto h = energy_gradients(mech, {{0, 0}, {0, 0}});
  EXPECT_NEAR(h.Eq.norm(), 0.0, 1e-15);
  EXPECT_NEAR(h.Ev.norm(), 0.0, 1e-15);
}

TEST(EnergyGradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (const auto& model : oracle::fixture_models()) {
    for (int i = 0; i < 40; ++i) {
      const Vec2 q = random_point(model.torus(), rng), v = random_velocity(rng, 0.8);
      const auto g = energy_gradients(model, {q, v});
      const double e = 1e-5;
      for (int j = 0; j < 2; ++j) {
        const Vec2 d = Vec2::Unit(j) * e;
        const double fq = (energy(model, {q + d, v}) - energy(model, {q - d, v})) / (2 * e);
        const double fv = (energy(model, {q, v + d}) - energy(model, {q, v - d})) / (2 * e);
        EXPECT_NEAR(g.Eq[j], fq, 1e-6 * std::max(1.0, std::abs(fq))) << model.name();
        EXPECT_NEAR(g.Ev[j], fv, 1e-6 * std::max(1.0, std::abs(fv))) << model.name();
      }
    }
  }
}

TEST(Legendre, Examples) {
  const auto r = legendre(kinetic_model(), {0.2, 0.1}, {1, 0});
  EXPECT_TRUE(r.v.isApprox(Vec2(1, 0), 1e-12));
  EXPECT_NEAR(r.H, 0.5, 1e-12);

  const CounterexampleParams p;
  const auto model = counterexample_model(p);
  const Vec2 q(0.3, -0.2), pp(0.4, -0.7);
  const auto c = legendre(model, q, pp);
  EXPECT_NEAR(c.v[0], pp[0] / p.r1, 1e-12);
  EXPECT_NEAR(c.v[1], pp[1] / p.r2, 1e-12);
}

TEST(Legendre, RoundTripAndDuality) {
  std::mt19937_64 rng(4);
  for (const auto& model : oracle::fixture_models()) {
    for (int i = 0; i < 100; ++i) {
      const Vec2 q = random_point(model.torus(), rng), v = random_velocity(rng, 1.0);
      const Vec2 p = model.jet(q, v).Lv;
      const auto r = legendre(model, q, p);
      EXPECT_LT((r.v - v).norm(), 1e-9) << model.name();
      EXPECT_NEAR(energy(model, {q, r.v}), r.H, 1e-9 * std::max(1.0, std::abs(r.H))) << model.name();
    }
  }
}

TEST(Clamp, KineticUnchanged) {
  const auto kin = kinetic_model();
  const auto c = clamp_quadratic_at_infinity(kin, 0.5);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const Vec2 q = random_point(kin.torus(), rng), v = random_velocity(rng, 3.0 * c.outer_radius);
    EXPECT_NEAR(c.model.L(q, v), kin.L(q, v), 1e-12 * std::max(1.0, kin.L(q, v)));
  }
}

TEST(Clamp, MechanicalAgreesInsideAndIsQuadraticOutside) {
  const auto mech = oracle::mechanical_fixture();
  const auto c = clamp_quadratic_at_infinity(mech, 1.0);
  const double R = c.outer_radius;
  EXPECT_NEAR(c.inner_radius, 0.5 * R, 1e-12);
  // the level {E <= k + margin} lies inside the region where nothing changes
  EXPECT_GT(c.inner_radius, max_speed_on_level(mech, 1.1));
  for (int a = 0; a < 16; ++a) {
    for (int b = 0; b < 16; ++b) {
      const Vec2 q(2 * M_PI * a / 16, 2 * M_PI * b / 16);
      for (int d = 0; d < 12; ++d) {
        const Vec2 u(std::cos(2 * M_PI * d / 12), std::sin(2 * M_PI * d / 12));
        for (double r : {0.0, 0.25 * R, 0.5 * R}) EXPECT_DOUBLE_EQ(c.model.L(q, r * u), mech.L(q, r * u));
        for (double r : {R, 1.5 * R, 10 * R}) EXPECT_DOUBLE_EQ(c.model.L(q, r * u), 0.5 * r * r);
      }
    }
  }
  EXPECT_GT(energy(c.model, {{0, 0}, {1e3, 0}}), 1e5);
  EXPECT_GT(min_fiber_convexity(c.model, 2 * R, 2000), 0.0);
}

TEST(ModelInvariants, FiberConvexSymmetric) {
  std::mt19937_64 rng(6);
  for (const auto& model : oracle::fixture_models()) {
    for (int i = 0; i < 1000; ++i) {
      const Vec2 q = random_point(model.torus(), rng), v = random_velocity(rng, 2.0);
      const Mat2 lvv = model.jet(q, v).Lvv;
      EXPECT_NEAR(lvv(0, 1), lvv(1, 0), 1e-12) << model.name();
      Eigen::SelfAdjointEigenSolver<Mat2> es(lvv);
      EXPECT_GT(es.eigenvalues()[0], 0.0) << model.name();
    }
  }
}

TEST(ModelInvariants, Superlinear) {
  std::mt19937_64 rng(7);
  for (const auto& model : oracle::fixture_models()) {
    for (int i = 0; i < 20; ++i) {
      const Vec2 q = random_point(model.torus(), rng), v = random_velocity(rng, 1.0).normalized();
      double prev = -std::numeric_limits<double>::infinity();
      for (double lambda : {10.0, 100.0, 1000.0}) {
        const double ratio = model.L(q, lambda * v) / lambda;
        EXPECT_GT(ratio, prev) << model.name();
        prev = ratio;
      }
      EXPECT_GT(prev, 100.0) << model.name();
    }
  }
}

// The clamp profile is only C^2, so second differences lose an order within a few steps of its seams.
static bool near_profile_seam(const Vec2& q) {
  const CounterexampleParams p;
  const Vec2 x = centered(p, q);
  for (int i = 0; i < 2; ++i) {
    for (double seam : {p.r2, p.R}) {
      if (std::abs(x[i] * x[i] - seam) < 1e-2) return true;
    }
  }
  return false;
}

TEST(ModelInvariants, JetMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  for (const auto& model : oracle::fixture_models()) {
    for (int i = 0; i < 200; ++i) {
      const Vec2 q = random_point(model.torus(), rng), v = random_velocity(rng, 1.0);
      if (model.name() == "counterexample" && near_profile_seam(q)) continue;
      const auto j = model.jet(q, v);
      const auto f = oracle::fd_jet(model, q, v, 1e-4 * std::max(1.0, v.norm()));
      const double scale = std::max({1.0, j.Lq.norm(), j.Lv.norm(), j.Lqq.norm(), j.Lvv.norm(), j.Lvq.norm()});
      EXPECT_LE((j.Lq - f.Lq).norm(), 1e-5 * scale) << model.name();
      EXPECT_LE((j.Lv - f.Lv).norm(), 1e-5 * scale) << model.name();
      EXPECT_LE((j.Lqq - f.Lqq).norm(), 1e-5 * scale) << model.name();
      EXPECT_LE((j.Lvv - f.Lvv).norm(), 1e-5 * scale) << model.name();
      EXPECT_LE((j.Lvq - f.Lvq).norm(), 1e-5 * scale) << model.name();
      EXPECT_LE(rel_err(j.L, model.L(q, v)), 0.0);
    }
  }
}
