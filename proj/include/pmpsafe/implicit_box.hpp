#pragma once

/**
 * @file
 * @brief Implicit position limits for dynamically extended inputs.
 *
 * A state u that is integrated from a rate input (u' = cmd) obeys
 *
 *   u' = f_u(u) + g_u(u) cmd
 *
 * with f_u in {0, +rate/2, -rate/2} and g_u in {1, 1/2} for u inside, at the
 * lower and at the upper bound. The cases are blended by
 *
 *   s_hi = (1 + tanh((u - ubar) / w)) / 2,   s_lo = (1 + tanh((-ubar - u) / w)) / 2,
 *   f_u  = rate (s_lo - s_hi),                g_u  = 1 - s_hi - s_lo,
 *
 * which reproduces the case values exactly at u = +-ubar and is smooth with
 * Lipschitz derivatives. At u = ubar and cmd = +rate the state derivative
 * is zero, so saturating commands park u on its bound.
 */

#include <cmath>
#include <vector>

#include "single_track.hpp"
#include "system_model.hpp"

namespace pmpsafe {

struct BoxBlend
{
  double s_hi, s_lo, ds_hi, ds_lo;
};

inline BoxBlend box_blend(double u, double ubar, double width)
{
  const double th = std::tanh((u - ubar) / width);
  const double tl = std::tanh((-ubar - u) / width);
  return {0.5 * (1.0 + th), 0.5 * (1.0 + tl), 0.5 * (1.0 - th * th) / width, -0.5 * (1.0 - tl * tl) / width};
}

/**
 * @brief Add implicit box limits to the states in which_states.
 *
 * which_states[k] is the state integrated from input column k. smoothing[k]
 * is the tanh width (must be > 0); pass an empty vector for 0.02 * pos_bounds.
 */
inline SystemModel extend_with_implicit_box(const SystemModel & base, const std::vector<Eigen::Index> & which_states,
                                            const Vec & rate_bounds, const Vec & pos_bounds, Vec smoothing = Vec())
{
  const auto k = static_cast<Eigen::Index>(which_states.size());
  if (rate_bounds.size() != k || pos_bounds.size() != k) {
    throw ConfigError("implicit box: bounds must match the number of extended states");
  }
  if (smoothing.size() == 0) smoothing = 0.02 * pos_bounds;
  if (smoothing.size() != k) throw ConfigError("implicit box: smoothing must match the number of extended states");
  for (Eigen::Index i = 0; i < k; ++i) {
    if (!(smoothing[i] > 0)) throw ConfigError("implicit box: smoothing must be strictly positive");
    if (!(rate_bounds[i] > 0) || !(pos_bounds[i] > 0)) throw ConfigError("implicit box: bounds must be positive");
    if (which_states[static_cast<std::size_t>(i)] < 0 || which_states[static_cast<std::size_t>(i)] >= base.state_dim) {
      throw ConfigError("implicit box: state index out of range");
    }
  }

  SystemModel sys = base;
  sys.name = base.name + "+implicit_box";
  const auto idx = which_states;

  sys.f = [base, idx, rate_bounds, pos_bounds, smoothing](const Vec & x) {
    Vec out = base.f(x);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto i = idx[k];
      const auto b = box_blend(x[i], pos_bounds[k], smoothing[k]);
      out[i] += rate_bounds[k] * (b.s_lo - b.s_hi);
    }
    return out;
  };
  sys.g = [base, idx, pos_bounds, smoothing](const Vec & x) {
    Mat G = base.g(x);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto i = idx[k];
      const auto b = box_blend(x[i], pos_bounds[k], smoothing[k]);
      G.row(i) *= 1.0 - b.s_hi - b.s_lo;
    }
    return G;
  };
  sys.jac_f = [base, idx, rate_bounds, pos_bounds, smoothing](const Vec & x) {
    Mat J = base.jac_f(x);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto i = idx[k];
      const auto b = box_blend(x[i], pos_bounds[k], smoothing[k]);
      J(i, i) += rate_bounds[k] * (b.ds_lo - b.ds_hi);
    }
    return J;
  };
  sys.jac_g = [base, idx, pos_bounds, smoothing](const Vec & x) {
    auto dG = base.jac_g(x);
    const Mat G = base.g(x);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto i = idx[k];
      const auto b = box_blend(x[i], pos_bounds[k], smoothing[k]);
      const double gu = 1.0 - b.s_hi - b.s_lo;
      for (auto & d : dG) d.row(i) *= gu;
      dG[static_cast<std::size_t>(i)].row(i) += (-b.ds_hi - b.ds_lo) * G.row(i);
    }
    return dG;
  };
  return sys;
}

/// Single-track model with implicit limits on delta (+-steer_max) and tau (+-torque_max).
inline SystemModel vehicle_model(const VehicleParams & params, const TireModel & tire, const TrackGeometry & track,
                                 double half_width = 3.0)
{
  Vec rates(2), pos(2);
  rates << params.steer_rate_max, params.torque_rate_max;
  pos << params.steer_max, params.torque_max;
  auto sys = extend_with_implicit_box(single_track_model(params, tire, track, half_width), {st::DELTA, st::TAU},
                                      rates, pos);
  sys.name = "vehicle";
  return sys;
}

}  // namespace pmpsafe
