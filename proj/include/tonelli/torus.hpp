#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "tonelli/errors.hpp"

namespace tonelli {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using Vec4 = Eigen::Matrix<double, 4, 1>;
using Mat4 = Eigen::Matrix4d;

/// Flat torus R^2 / (s1 Z x s2 Z).
class TorusConfig {
 public:
  TorusConfig() : sides_(1.0, 1.0) {}
  TorusConfig(double s1, double s2) : sides_(s1, s2) {
    if (!(s1 > 0.0) || !(s2 > 0.0) || !std::isfinite(s1) || !std::isfinite(s2)) {
      throw Error(ErrorKind::InvalidArgument, "torus side lengths must be positive and finite");
    }
  }

  const Vec2& sides() const { return sides_; }
  double side(int i) const { return sides_[i]; }
  double min_side() const { return sides_.minCoeff(); }
  double diameter() const { return 0.5 * sides_.norm(); }
  double area() const { return sides_[0] * sides_[1]; }

  /// Representative in [0, s1) x [0, s2).
  Vec2 wrap(const Vec2& q) const {
    Vec2 out;
    for (int i = 0; i < 2; ++i) {
      double x = std::fmod(q[i], sides_[i]);
      if (x < 0.0) x += sides_[i];
      if (x >= sides_[i]) x -= sides_[i];
      out[i] = x;
    }
    return out;
  }

  /// Shortest lattice-translate of q1 - q0.
  Vec2 displacement(const Vec2& q0, const Vec2& q1) const {
    Vec2 d = q1 - q0;
    for (int i = 0; i < 2; ++i) d[i] -= sides_[i] * std::round(d[i] / sides_[i]);
    return d;
  }

  double distance(const Vec2& q0, const Vec2& q1) const { return displacement(q0, q1).norm(); }

  bool operator==(const TorusConfig& other) const { return sides_ == other.sides_; }

 private:
  Vec2 sides_;
};

inline double torus_distance(const TorusConfig& cfg, const Vec2& q0, const Vec2& q1) {
  return cfg.distance(q0, q1);
}

/// Point on the tangent bundle; q is kept in the fundamental domain.
struct TangentState {
  Vec2 q = Vec2::Zero();
  Vec2 v = Vec2::Zero();
};

inline Vec4 pack(const TangentState& s) {
  Vec4 x;
  x << s.q, s.v;
  return x;
}

}  // namespace tonelli
