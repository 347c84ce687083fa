#pragma once

#include "control_set.hpp"

namespace pmpsafe {

/// Value with its spatial gradient and time-to-go derivative at one (x, tau).
struct ValueAndGradients
{
  double value{0};
  Vec grad_x;
  double dV_dtau{0};
};

}  // namespace pmpsafe
