#pragma once

// Reference answers for the corridor model that do not use the library's dynamics or solvers.
//
// Dynamics written out by hand (straight or constant-curvature segment):
//   e'    = V sin(dphi)
//   dphi' = V u - kappa V cos(dphi) / (1 - kappa e),   |u| <= ubar

#include <algorithm>
#include <array>
#include <cmath>

namespace pmpsafe::test {

struct CorridorOracle
{
  double V{10.0};
  double ubar{1.0 / 12.0};
  double kappa{0.0};
  double half_width{3.0};
  double horizon{1.0};
  int intervals{8};
  int levels{9};
  int substeps{5};

  std::array<double, 2> rhs(const std::array<double, 2> & s, double u) const
  {
    return {V * std::sin(s[1]), V * u - kappa * V * std::cos(s[1]) / (1.0 - kappa * s[0])};
  }

  std::array<double, 2> rk4(const std::array<double, 2> & s, double u, double h) const
  {
    auto add = [](const std::array<double, 2> & a, const std::array<double, 2> & b, double c) {
      return std::array<double, 2>{a[0] + c * b[0], a[1] + c * b[1]};
    };
    const auto k1 = rhs(s, u);
    const auto k2 = rhs(add(s, k1, 0.5 * h), u);
    const auto k3 = rhs(add(s, k2, 0.5 * h), u);
    const auto k4 = rhs(add(s, k3, h), u);
    return {s[0] + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            s[1] + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])};
  }

  bool inside(const std::array<double, 2> & s) const { return std::abs(s[0]) <= half_width; }

  /// Depth-first search over every piecewise-constant sequence; true as soon as one stays inside.
  bool brute_force_safe(double e, double dphi) const
  {
    const std::array<double, 2> s{e, dphi};
    if (!inside(s)) return false;
    return search(s, 0);
  }

  /// Closed-form answer for the straight segment: turning hard against the heading is optimal.
  bool analytic_safe(double e, double dphi) const
  {
    if (std::abs(e) > half_width) return false;
    if (dphi < 0) {
      e = -e;
      dphi = -dphi;
    }
    const double w = V * ubar;
    const double t_star = dphi / w;
    const double t_end = std::min(t_star, horizon);
    const double peak = e + V / w * (std::cos(dphi - w * t_end) - std::cos(dphi));
    return peak <= half_width;
  }

private:
  bool search(const std::array<double, 2> & s, int depth) const
  {
    if (depth == intervals) return true;
    const double h = horizon / intervals / substeps;
    // try the levels that turn against the current drift first; every level is still tried
    const double drift = std::sin(s[1]) + 0.05 * s[0];
    for (int q = 0; q < levels; ++q) {
      const double frac = static_cast<double>(q) / (levels - 1);
      const double u = (drift >= 0 ? -1.0 : 1.0) * ubar * (1.0 - 2.0 * frac);
      std::array<double, 2> x = s;
      bool ok = true;
      for (int k = 0; k < substeps && ok; ++k) {
        x = rk4(x, u, h);
        ok = inside(x);
      }
      if (ok && search(x, depth + 1)) return true;
    }
    return false;
  }
};

}  // namespace pmpsafe::test
