#pragma once

/**
 * @file
 * @brief Single-track (bicycle) racing model in path coordinates with brush tires.
 *
 * State x = [s e dphi V r beta delta tau gamma]: path progress, lateral error,
 * course error, speed, yaw rate, sideslip, roadwheel angle, total torque and
 * the virtual class-K parameter (zero dynamics). Input u = [delta_rate, tau_rate].
 *
 * The course-error row contains beta'; the closed-form sideslip row is
 * substituted so f is explicit in the state.
 */

#include <array>
#include <cmath>

#include "dual.hpp"
#include "system_model.hpp"
#include "tire.hpp"
#include "track.hpp"

namespace pmpsafe {

namespace st {
enum Index : Eigen::Index { S = 0, E, DPHI, V, R, BETA, DELTA, TAU, GAMMA, N };
}

/// Test-vehicle parameters (about 2000 kg). Not taken from any published vehicle.
struct VehicleParams
{
  double mass{2000.0};
  double yaw_inertia{3500.0};
  double a{1.4};  ///< CG to front axle, m
  double b{1.5};  ///< CG to rear axle, m
  double wheel_radius{0.33};
  /// share of total torque on the front axle
  double front_torque_fraction{0.5};
  double gravity{9.81};
  double v_min{1.0};

  double steer_max{0.71};
  double steer_rate_max{1.0};
  double torque_max{3000.0};
  double torque_rate_max{5000.0};

  void validate() const
  {
    if (!(mass > 0) || !(yaw_inertia > 0) || !(a > 0) || !(b > 0) || !(wheel_radius > 0)) {
      throw ConfigError("VehicleParams: mass, inertia, axle distances and wheel radius must be positive");
    }
    if (front_torque_fraction < 0 || front_torque_fraction > 1) {
      throw ConfigError("VehicleParams: front torque fraction must lie in [0, 1]");
    }
    if (!(steer_max > 0) || !(steer_rate_max > 0) || !(torque_max > 0) || !(torque_rate_max > 0)) {
      throw ConfigError("VehicleParams: input bounds must be positive");
    }
    if (!(v_min > 0)) throw ConfigError("VehicleParams: v_min must be positive");
  }
};

/// Static axle loads when the tire model leaves them at zero.
inline TireModel with_static_loads(TireModel tire, const VehicleParams & p)
{
  const double L = p.a + p.b;
  if (tire.normal_load_front <= 0) tire.normal_load_front = p.mass * p.gravity * p.b / L;
  if (tire.normal_load_rear <= 0) tire.normal_load_rear = p.mass * p.gravity * p.a / L;
  return tire;
}

template<class T>
std::array<T, st::N> single_track_rhs(const std::array<T, st::N> & x, const VehicleParams & p, const TireModel & tire,
                                      const TrackGeometry & track)
{
  using std::atan2;
  using std::cos;
  using std::sin;
  using namespace st;

  const T & e = x[E];
  const T & dphi = x[DPHI];
  const T & v = x[V];
  const T & r = x[R];
  const T & beta = x[BETA];
  const T & delta = x[DELTA];
  const T & tau = x[TAU];

  if (!(value_of(v) > p.v_min)) throw DomainError("single track: speed at or below v_min");
  const double kappa = track.kappa_ref(value_of(x[S]));
  const T denom = 1.0 - kappa * e;
  if (!(value_of(denom) > 0.0)) throw DomainError("single track: 1 - kappa_ref e <= 0");

  const T fx_total = tau / p.wheel_radius;
  const T fxf = p.front_torque_fraction * fx_total;
  const T fxr = (1.0 - p.front_torque_fraction) * fx_total;

  const T alpha_f = atan2(v * sin(beta) + p.a * r, v * cos(beta)) - delta;
  const T alpha_r = atan2(v * sin(beta) - p.b * r, v * cos(beta));
  const T fymax_f = derated_max_lateral_force(tire.mu, tire.normal_load_front, fxf, tire.zeta);
  const T fymax_r = derated_max_lateral_force(tire.mu, tire.normal_load_rear, fxr, tire.zeta);
  const T fyf = brush_lateral_force(alpha_f, tire.cornering_stiffness_front, fymax_f);
  const T fyr = brush_lateral_force(alpha_r, tire.cornering_stiffness_rear, fymax_r);

  const T path_rate = v * cos(dphi) / denom;
  const T beta_dot =
      (fxf * sin(delta - beta) + fyf * cos(delta - beta) - fxr * sin(beta) + fyr * cos(beta)) / (p.mass * v) - r;

  std::array<T, N> out;
  out[S] = path_rate;
  out[E] = v * sin(dphi);
  out[DPHI] = beta_dot + r - kappa * path_rate;
  out[V] = (fxf * cos(delta - beta) - fyf * sin(delta - beta) + fxr * cos(beta) + fyr * sin(beta)) / p.mass;
  out[R] = (p.a * (fxf * sin(delta) + fyf * cos(delta)) - p.b * fyr) / p.yaw_inertia;
  out[BETA] = beta_dot;
  out[DELTA] = T(0.0);
  out[TAU] = T(0.0);
  out[GAMMA] = T(0.0);
  return out;
}

/**
 * @brief Nine-state single-track model with g selecting (delta_rate, tau_rate).
 *
 * Jacobians come from forward-mode dual numbers. The input box is the rate
 * box; position limits on delta and tau are added by extend_with_implicit_box().
 */
inline SystemModel single_track_model(const VehicleParams & params, const TireModel & tire_in,
                                      const TrackGeometry & track, double half_width = 3.0)
{
  params.validate();
  tire_in.validate();
  const TireModel tire = with_static_loads(tire_in, params);
  static constexpr int n = st::N;

  SystemModel sys;
  sys.name = "single_track";
  sys.state_dim = n;
  sys.control_dim = 2;
  sys.state_names = {"s", "e", "dphi", "V", "r", "beta", "delta", "tau", "gamma"};
  sys.f = [params, tire, track](const Vec & x) {
    std::array<double, n> xs;
    for (int i = 0; i < n; ++i) xs[i] = x[i];
    const auto out = single_track_rhs(xs, params, tire, track);
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = out[i];
    return v;
  };
  sys.jac_f = [params, tire, track](const Vec & x) {
    std::array<Dual<n>, n> xs;
    for (int i = 0; i < n; ++i) xs[i] = Dual<n>::variable(x[i], i);
    const auto out = single_track_rhs(xs, params, tire, track);
    Mat J(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) J(i, j) = out[i].d[j];
    return J;
  };
  sys.g = [](const Vec &) {
    Mat G = Mat::Zero(n, 2);
    G(st::DELTA, 0) = 1.0;
    G(st::TAU, 1) = 1.0;
    return G;
  };
  sys.jac_g = [](const Vec &) { return std::vector<Mat>(n, Mat::Zero(n, 2)); };
  Vec rates(2);
  rates << params.steer_rate_max, params.torque_rate_max;
  sys.control_set = ControlSet::box(rates);
  sys.h = [half_width](const Vec & x) { return half_width - std::abs(x[st::E]); };
  sys.grad_h = [](const Vec & x) {
    Vec gr = Vec::Zero(n);
    gr[st::E] = x[st::E] > 0 ? -1.0 : (x[st::E] < 0 ? 1.0 : 0.0);
    return gr;
  };
  sys.boundary = BoundaryAxis{st::E, -half_width, half_width};
  return sys;
}

}  // namespace pmpsafe
