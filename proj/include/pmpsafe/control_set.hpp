#pragma once

#include <Eigen/Core>

#include <cmath>
#include <string>

#include "errors.hpp"

namespace pmpsafe {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Compact convex admissible input set: an axis-aligned box or a Euclidean ball.
struct ControlSet
{
  enum class Kind { Box, Ball };

  Kind kind{Kind::Box};
  /// per-axis half-widths (Box) or a single radius stored in bounds[0] (Ball)
  Vec bounds;
  Vec center;

  static ControlSet box(const Vec & half_widths, const Vec & center)
  {
    ControlSet s{Kind::Box, half_widths, center};
    s.validate();
    return s;
  }
  static ControlSet box(const Vec & half_widths) { return box(half_widths, Vec::Zero(half_widths.size())); }

  static ControlSet ball(double radius, const Vec & center)
  {
    ControlSet s{Kind::Ball, Vec::Constant(1, radius), center};
    s.validate();
    return s;
  }

  Eigen::Index dim() const { return center.size(); }
  double radius() const { return bounds[0]; }

  void validate() const
  {
    if (kind == Kind::Box && bounds.size() != center.size()) {
      throw ConfigError("ControlSet: box half-widths and center differ in size");
    }
    if (kind == Kind::Ball && bounds.size() != 1) { throw ConfigError("ControlSet: ball needs a single radius"); }
    if (center.size() == 0) { throw ConfigError("ControlSet: empty"); }
    for (Eigen::Index i = 0; i < bounds.size(); ++i) {
      if (!(bounds[i] > 0.0) || !std::isfinite(bounds[i])) {
        throw ConfigError("ControlSet: half-widths and radius must be finite and strictly positive");
      }
    }
  }

  Vec lower() const { return kind == Kind::Box ? Vec(center - bounds) : Vec(center.array() - radius()); }
  Vec upper() const { return kind == Kind::Box ? Vec(center + bounds) : Vec(center.array() + radius()); }

  bool contains(const Vec & u, double tol = 0.0) const
  {
    if (kind == Kind::Box) { return ((u - center).cwiseAbs() - bounds).maxCoeff() <= tol; }
    return (u - center).norm() <= radius() + tol;
  }

  /// Support function max_{u in U} v'u.
  double support(const Vec & v) const
  {
    if (kind == Kind::Box) { return v.dot(center) + v.cwiseAbs().dot(bounds); }
    return v.dot(center) + radius() * v.norm();
  }

  /// Euclidean projection onto the set.
  Vec project(const Vec & u) const
  {
    if (kind == Kind::Box) { return u.cwiseMax(lower()).cwiseMin(upper()); }
    const Vec d = u - center;
    const double n = d.norm();
    return n <= radius() ? u : Vec(center + d * (radius() / n));
  }
};

/**
 * @brief argmax_{u in U} v'u in closed form.
 *
 * Box: componentwise u_j = c_j + ubar_j sign(v_j), with v_j == 0 mapped to the
 * center coordinate (every value in the interval maximizes, the choice is
 * objective-neutral). Ball: u = c + r v / |v|; throws SingularDirection when
 * |v| <= singular_tol since the maximizer is then not unique.
 */
inline Vec closed_form_maximizer(const Vec & v, const ControlSet & set, double singular_tol = 1e-12)
{
  if (v.size() != set.dim()) { throw ConfigError("closed_form_maximizer: dimension mismatch"); }
  if (set.kind == ControlSet::Kind::Box) {
    Vec u = set.center;
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      if (v[j] > 0.0) {
        u[j] += set.bounds[j];
      } else if (v[j] < 0.0) {
        u[j] -= set.bounds[j];
      }
    }
    return u;
  }
  const double n = v.norm();
  if (n <= singular_tol) { throw SingularDirection("closed_form_maximizer: |v| below singular tolerance for a ball set"); }
  return set.center + v * (set.radius() / n);
}

}  // namespace pmpsafe
