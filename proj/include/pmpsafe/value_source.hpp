#pragma once

/**
 * @file
 * @brief Uniform read-only view over the different value function backends.
 *
 * A ValueSource answers (x, tau) -> (V, grad_x V, dV/dtau) and knows its state
 * box and horizon. Grid sources throw ExtrapolationError outside their axes;
 * network sources do the same outside their normalization box unless told to
 * extrapolate. Sources are immutable and may be shared between threads.
 */

#include <functional>
#include <memory>
#include <string>

#include "hj_grid.hpp"
#include "value_net.hpp"
#include "value_types.hpp"

namespace pmpsafe {

class ValueSource
{
public:
  using EvalFn = std::function<ValueAndGradients(const Vec &, double)>;

  ValueSource() = default;
  ValueSource(std::string kind, EvalFn fn, Vec lo, Vec hi, double horizon)
      : kind_(std::move(kind)), fn_(std::move(fn)), lo_(std::move(lo)), hi_(std::move(hi)), horizon_(horizon)
  {
  }

  ValueAndGradients eval(const Vec & x, double tau) const
  {
    if (!fn_) throw ConfigError("ValueSource: empty source");
    return fn_(x, tau);
  }

  bool contains(const Vec & x) const
  {
    return x.size() == lo_.size() && (x - lo_).minCoeff() >= 0 && (hi_ - x).minCoeff() >= 0;
  }

  const std::string & kind() const { return kind_; }
  const Vec & lo() const { return lo_; }
  const Vec & hi() const { return hi_; }
  double horizon() const { return horizon_; }
  Eigen::Index state_dim() const { return lo_.size(); }

private:
  std::string kind_;
  EvalFn fn_;
  Vec lo_, hi_;
  double horizon_{0};
};

inline ValueSource grid_source(std::shared_ptr<const GridValueFunction> vf)
{
  if (!vf) throw ConfigError("grid_source: null grid");
  Vec lo(static_cast<Eigen::Index>(vf->dims())), hi(lo.size());
  for (std::size_t i = 0; i < vf->dims(); ++i) {
    lo[static_cast<Eigen::Index>(i)] = vf->axes[i].min;
    hi[static_cast<Eigen::Index>(i)] = vf->axes[i].max;
  }
  const double T = vf->horizon();
  return {"grid", [vf](const Vec & x, double tau) { return eval_value_and_gradients(*vf, x, tau); }, lo, hi, T};
}

inline ValueSource net_source(std::shared_ptr<const ValueNet> net, bool allow_extrapolation = false)
{
  if (!net) throw ConfigError("net_source: null network");
  const Vec lo = net->normalization().lo, hi = net->normalization().hi;
  return {"net",
          [net, lo, hi, allow_extrapolation](const Vec & x, double tau) {
            if (!allow_extrapolation &&
                (x.size() != lo.size() || (x - lo).minCoeff() < 0 || (hi - x).minCoeff() < 0)) {
              throw ExtrapolationError("network value queried outside its normalization box");
            }
            return forward_with_gradients(*net, x, tau);
          },
          lo, hi, net->horizon()};
}

/// Closed-form or test source; the caller supplies the domain box.
inline ValueSource function_source(ValueSource::EvalFn fn, Vec lo, Vec hi, double horizon)
{
  return {"function", std::move(fn), std::move(lo), std::move(hi), horizon};
}

}  // namespace pmpsafe
