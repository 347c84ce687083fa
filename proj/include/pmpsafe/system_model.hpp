#pragma once

/**
 * @file
 * @brief Control-affine system description xdot = f(x) + g(x) u with safe set {h >= 0}.
 */

#include <Eigen/Core>

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "control_set.hpp"
#include "errors.hpp"

namespace pmpsafe {

/// Safe set of the form lower <= x[index] <= upper (a single constrained coordinate).
struct BoundaryAxis
{
  Eigen::Index index{0};
  double lower{0};
  double upper{0};
};

struct SystemModel
{
  std::string name;
  Eigen::Index state_dim{0};
  Eigen::Index control_dim{0};

  std::function<Vec(const Vec &)> f;
  std::function<Mat(const Vec &)> g;
  std::function<Mat(const Vec &)> jac_f;
  /// jac_g(x)[k] = dg/dx_k, each n x m
  std::function<std::vector<Mat>(const Vec &)> jac_g;

  ControlSet control_set;

  /// signed safety margin, also used as the constraint function l(x) of the value function
  std::function<double(const Vec &)> h;
  std::function<Vec(const Vec &)> grad_h;

  /// set when the safe set is a slab in one coordinate; enables analytic boundary sampling
  std::optional<BoundaryAxis> boundary;

  std::vector<std::string> state_names;

  Vec xdot(const Vec & x, const Vec & u) const { return f(x) + g(x) * u; }

  /// d(g(x) u)/dx as an n x n matrix.
  Mat jac_gu(const Vec & x, const Vec & u) const
  {
    const auto dg = jac_g(x);
    Mat out(state_dim, state_dim);
    for (Eigen::Index k = 0; k < state_dim; ++k) { out.col(k) = dg[static_cast<std::size_t>(k)] * u; }
    return out;
  }

  void check_state(const Vec & x) const
  {
    if (x.size() != state_dim) { throw ConfigError(name + ": state has wrong dimension"); }
  }
};

/// Hamiltonian p'(f + g u) without the abnormal multiplier.
inline double hamiltonian(const SystemModel & sys, const Vec & x, const Vec & p, const Vec & u)
{
  return p.dot(sys.xdot(x, u));
}

/// Lie-derivative pair (L_f V, L_g V) for a gradient of V at x.
inline std::pair<double, Vec> lie_derivatives(const SystemModel & sys, const Vec & x, const Vec & grad)
{
  return {grad.dot(sys.f(x)), sys.g(x).transpose() * grad};
}

/// One RK4 step of xdot = f + g u with u held constant.
inline Vec rk4_step(const SystemModel & sys, const Vec & x, const Vec & u, double dt)
{
  const Vec k1 = sys.xdot(x, u);
  const Vec k2 = sys.xdot(x + 0.5 * dt * k1, u);
  const Vec k3 = sys.xdot(x + 0.5 * dt * k2, u);
  const Vec k4 = sys.xdot(x + dt * k3, u);
  return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace pmpsafe
