#pragma once

/**
 * @file
 * @brief Derated brush (Fiala) lateral tire model.
 *
 * The friction limit is derated by the longitudinal force,
 * Fy_max = sqrt((mu Fz)^2 - zeta Fx^2), and the lateral force follows the
 * cubic brush curve up to full sliding at tan(alpha_sl) = 3 Fy_max / C.
 * Sign convention: Fy = -C tan(alpha) for small alpha.
 */

#include <cmath>

#include "dual.hpp"
#include "errors.hpp"

namespace pmpsafe {

struct TireModel
{
  double mu{0.9};
  /// per-axle cornering stiffness, N/rad
  double cornering_stiffness_front{160000.0};
  double cornering_stiffness_rear{180000.0};
  /// longitudinal coupling derate
  double zeta{0.99};
  double normal_load_front{0};
  double normal_load_rear{0};

  void validate() const
  {
    if (!(mu > 0) || !(cornering_stiffness_front > 0) || !(cornering_stiffness_rear > 0)) {
      throw ConfigError("TireModel: mu and cornering stiffness must be positive");
    }
    if (!(zeta > 0) || zeta > 1.0) throw ConfigError("TireModel: zeta must lie in (0, 1]");
  }
};

/// Maximum lateral force after derating; DomainError when the longitudinal force exhausts friction.
template<class T>
T derated_max_lateral_force(double mu, double normal_load, const T & fx, double zeta)
{
  using std::sqrt;
  const double limit = mu * normal_load;
  const T rem = limit * limit - zeta * fx * fx;
  if (!(value_of(rem) > 0.0)) {
    throw DomainError("tire: longitudinal force exhausts the friction limit (zeta Fx^2 >= (mu Fz)^2)");
  }
  return sqrt(rem);
}

/// Brush-model lateral force for slip angle alpha (rad).
template<class T>
T brush_lateral_force(const T & alpha, double stiffness, const T & fy_max)
{
  using std::abs;
  using std::atan;
  using std::tan;
  const T alpha_sl = atan(3.0 * fy_max / stiffness);
  if (value_of(abs(alpha)) < value_of(alpha_sl)) {
    const T t = tan(alpha);
    const T at = abs(t);
    return -stiffness * t + stiffness * stiffness / (3.0 * fy_max) * at * t -
           stiffness * stiffness * stiffness / (27.0 * fy_max * fy_max) * t * t * t;
  }
  return value_of(alpha) > 0.0 ? T(-1.0) * fy_max : fy_max;
}

}  // namespace pmpsafe
