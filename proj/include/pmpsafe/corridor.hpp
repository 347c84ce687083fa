#pragma once

/**
 * @file
 * @brief Two-state kinematic corridor model used for exact verification.
 *
 * State (e, dphi), input u = commanded path curvature with |u| <= curvature_bound,
 * constant speed V:
 *
 *   e'    = V sin(dphi)
 *   dphi' = V u - kappa_ref V cos(dphi) / (1 - kappa_ref e)
 *
 * Safe set: h(x) = half_width - |e|.
 */

#include <cmath>

#include "system_model.hpp"
#include "track.hpp"

namespace pmpsafe {

struct CorridorConfig
{
  double speed{10.0};
  double curvature_bound{1.0 / 12.0};
  /// 0 for a straight segment, 1/R for a turn
  double ref_curvature{0.0};
  double half_width{3.0};
};

inline SystemModel kinematic_corridor_model(const CorridorConfig & cfg)
{
  if (!(cfg.speed > 0)) throw ConfigError("corridor: speed must be positive");
  if (!(cfg.curvature_bound > 0)) throw ConfigError("corridor: curvature bound must be positive");
  if (!(cfg.half_width > 0)) throw ConfigError("corridor: half width must be positive");

  const double V = cfg.speed;
  const double k = cfg.ref_curvature;
  const double w = cfg.half_width;

  auto denom = [k](const Vec & x) {
    const double d = 1.0 - k * x[0];
    if (!(d > 0.0)) throw DomainError("corridor: 1 - kappa_ref e <= 0 (lateral error beyond the turn center)");
    return d;
  };

  SystemModel sys;
  sys.name = "corridor";
  sys.state_dim = 2;
  sys.control_dim = 1;
  sys.state_names = {"e", "dphi"};
  sys.f = [V, k, denom](const Vec & x) {
    const double d = denom(x);
    Vec out(2);
    out << V * std::sin(x[1]), -k * V * std::cos(x[1]) / d;
    return out;
  };
  sys.g = [V](const Vec &) {
    Mat out(2, 1);
    out << 0.0, V;
    return out;
  };
  sys.jac_f = [V, k, denom](const Vec & x) {
    const double d = denom(x);
    Mat J(2, 2);
    J << 0.0, V * std::cos(x[1]), -k * k * V * std::cos(x[1]) / (d * d), k * V * std::sin(x[1]) / d;
    return J;
  };
  sys.jac_g = [](const Vec &) { return std::vector<Mat>(2, Mat::Zero(2, 1)); };
  sys.control_set = ControlSet::box(Vec::Constant(1, cfg.curvature_bound));
  sys.h = [w](const Vec & x) { return w - std::abs(x[0]); };
  sys.grad_h = [](const Vec & x) {
    Vec gr = Vec::Zero(2);
    gr[0] = x[0] > 0 ? -1.0 : (x[0] < 0 ? 1.0 : 0.0);
    return gr;
  };
  sys.boundary = BoundaryAxis{0, -w, w};
  return sys;
}

/// Corridor on the given track: straight segment by default, a turn when on_turn is set.
inline SystemModel kinematic_corridor_model(double speed, double curvature_bound, const TrackGeometry & track,
                                            bool on_turn = false)
{
  CorridorConfig cfg;
  cfg.speed = speed;
  cfg.curvature_bound = curvature_bound;
  cfg.ref_curvature = on_turn ? 1.0 / track.turn_radius() : 0.0;
  cfg.half_width = track.half_width();
  return kinematic_corridor_model(cfg);
}

}  // namespace pmpsafe
