#pragma once

/**
 * @file
 * @brief Oval track made of two straights joined by two left-hand half circles.
 *
 * Path progress s = 0 is the start of the lower straight at (0, 0), heading +X.
 * Lateral error e is positive to the left of the centerline (towards the
 * inside of the turns), so the reference curvature on turns is +1/R.
 */

#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include "errors.hpp"

namespace pmpsafe {

struct GlobalPose
{
  double X{0};
  double Y{0};
  double psi{0};
};

struct FrenetPose
{
  double s{0};
  double e{0};
  double heading_err{0};
};

class TrackGeometry
{
public:
  TrackGeometry() : TrackGeometry(20.0, 12.0, 3.0) {}

  TrackGeometry(double straight_length, double turn_radius, double half_width)
      : straight_(straight_length), radius_(turn_radius), half_width_(half_width)
  {
    if (!(straight_ > 0) || !(radius_ > 0) || !(half_width_ > 0)) {
      throw ConfigError("TrackGeometry: lengths must be strictly positive");
    }
    if (half_width_ >= radius_) { throw ConfigError("TrackGeometry: half width must be below the turn radius"); }
  }

  double straight_length() const { return straight_; }
  double turn_radius() const { return radius_; }
  double half_width() const { return half_width_; }
  double total_length() const { return 2.0 * straight_ + 2.0 * std::numbers::pi * radius_; }

  double wrap(double s) const
  {
    const double L = total_length();
    double w = std::fmod(s, L);
    if (w < 0) w += L;
    return w;
  }

  /// Piecewise constant: 0 on straights, 1/R on turns.
  double kappa_ref(double s) const
  {
    const auto seg = segment(wrap(s));
    return (seg.index % 2 == 1) ? 1.0 / radius_ : 0.0;
  }

  GlobalPose frenet_to_global(double s, double e, double heading_err) const
  {
    const auto c = centerline(wrap(s));
    // left normal of the centerline heading
    const double nx = -std::sin(c.psi);
    const double ny = std::cos(c.psi);
    return {c.X + e * nx, c.Y + e * ny, c.psi + heading_err};
  }

  /// Closest-point projection onto the centerline. Singular only at the turn centers.
  FrenetPose global_to_frenet(double X, double Y, double psi) const
  {
    const double pi = std::numbers::pi;
    const double arc = pi * radius_;
    double best_d = std::numeric_limits<double>::infinity();
    FrenetPose best;
    auto consider = [&](double s, double e, double path_psi) {
      // distance to centerline point is |e| for a valid projection
      if (std::abs(e) < best_d) {
        best_d = std::abs(e);
        best = {s, e, wrap_angle(psi - path_psi)};
      }
    };
    // lower straight: y = 0, x in [0, L], heading +X
    if (X >= 0 && X <= straight_) consider(X, Y, 0.0);
    // upper straight: y = 2R, x from L to 0, heading -X
    if (X >= 0 && X <= straight_) consider(straight_ + arc + (straight_ - X), 2.0 * radius_ - Y, pi);
    // right turn, center (L, R), points with x >= L
    if (X >= straight_) {
      const double dx = X - straight_;
      const double dy = Y - radius_;
      const double ang = std::atan2(dy, dx);  // -pi/2 at entry, +pi/2 at exit
      const double r = std::hypot(dx, dy);
      consider(straight_ + (ang + pi / 2.0) * radius_, radius_ - r, ang + pi / 2.0);
    }
    // left turn, center (0, R), points with x <= 0
    if (X <= 0) {
      const double dx = X;
      const double dy = Y - radius_;
      double ang = std::atan2(dy, dx);  // +pi/2 at entry, moves to pi then -pi/2 at exit
      if (ang < 0) ang += 2.0 * pi;     // now in [pi/2, 3pi/2]
      const double r = std::hypot(dx, dy);
      consider(2.0 * straight_ + arc + (ang - pi / 2.0) * radius_, radius_ - r, ang + pi / 2.0);
    }
    best.s = wrap(best.s);
    return best;
  }

  static double wrap_angle(double a)
  {
    const double pi = std::numbers::pi;
    a = std::fmod(a + pi, 2.0 * pi);
    if (a < 0) a += 2.0 * pi;
    return a - pi;
  }

private:
  struct Segment
  {
    int index;     // 0 lower straight, 1 right turn, 2 upper straight, 3 left turn
    double local;  // arc length into the segment
  };

  Segment segment(double s) const
  {
    const double arc = std::numbers::pi * radius_;
    if (s < straight_) return {0, s};
    s -= straight_;
    if (s < arc) return {1, s};
    s -= arc;
    if (s < straight_) return {2, s};
    return {3, s - straight_};
  }

  GlobalPose centerline(double s) const
  {
    const double pi = std::numbers::pi;
    const auto seg = segment(s);
    switch (seg.index) {
      case 0: return {seg.local, 0.0, 0.0};
      case 1: {
        const double th = seg.local / radius_;
        return {straight_ + radius_ * std::sin(th), radius_ - radius_ * std::cos(th), th};
      }
      case 2: return {straight_ - seg.local, 2.0 * radius_, pi};
      default: {
        const double th = seg.local / radius_;
        return {-radius_ * std::sin(th), radius_ + radius_ * std::cos(th), pi + th};
      }
    }
  }

  double straight_;
  double radius_;
  double half_width_;
};

}  // namespace pmpsafe
