#pragma once

/**
 * @file
 * @brief Minimally invasive value-function QP filter over box-bounded inputs.
 *
 *   minimize ||u - u_d||^2   subject to   a'u >= b,   lo <= u <= hi
 *
 * with a = g(x)' grad V and b = -gamma V - grad V' f(x), optionally plus dV/dtau.
 * In time-to-go form the condition dV/dt + L_f V + L_g V u >= -gamma V becomes
 * -dV/dtau + L_f V + L_g V u >= -gamma V, which moves +dV/dtau into b.
 *
 * The QP is solved exactly by enumerating active sets: each input is free, at its
 * lower bound or at its upper bound, and the halfspace is active or not. That is
 * 2 * 3^m candidates, fine for the m <= 2 inputs used here.
 */

#include <chrono>
#include <cmath>
#include <limits>
#include <vector>

#include "errors.hpp"
#include "system_model.hpp"
#include "value_source.hpp"

namespace pmpsafe {

struct FilterProblem
{
  Vec u_d;
  Vec a;
  double b{0};
  Vec lo;
  Vec hi;
  /// the value and its derivatives used to assemble (a, b); kept for logging
  double value{0};
  double dV_dtau{0};
};

enum class FilterStatus { Ok, Infeasible };

struct FilterResult
{
  Vec u_out;
  bool intervened{false};
  FilterStatus status{FilterStatus::Ok};
  double kkt_residual{0};
  /// per input: -1 at lower bound, +1 at upper bound, 0 free
  std::vector<int> bound_activity;
  bool halfspace_active{false};
  double wall_time{0};
  double value{0};
  /// a'u_out - b, negative only when infeasible
  double slack{0};
};

struct FilterConfig
{
  double gamma{0.1};
  /// time-to-go at which the value is queried; negative means the source horizon
  double tau{-1.0};
  /// include the dV/dtau term in b
  bool time_term{false};
  double intervention_tol{1e-9};
};

inline constexpr double kFilterInterventionTol = 1e-9;

inline FilterProblem build_problem(const ValueSource & source, const SystemModel & sys, const Vec & x, double tau,
                                   const Vec & u_d, double gamma, bool time_term = false)
{
  if (sys.control_set.kind != ControlSet::Kind::Box) throw ConfigError("safety filter: control set must be a box");
  if (u_d.size() != sys.control_dim) throw ConfigError("safety filter: desired input has wrong dimension");
  const auto v = source.eval(x, tau);
  FilterProblem p;
  p.u_d = u_d;
  p.a = sys.g(x).transpose() * v.grad_x;
  p.b = -gamma * v.value - v.grad_x.dot(sys.f(x)) + (time_term ? v.dV_dtau : 0.0);
  p.lo = sys.control_set.lower();
  p.hi = sys.control_set.upper();
  p.value = v.value;
  p.dV_dtau = v.dV_dtau;
  return p;
}

namespace detail {

// Best KKT residual over multipliers for a candidate point u.
inline double kkt_residual(const FilterProblem & p, const Vec & u, const std::vector<int> & act, bool halfspace)
{
  const Eigen::Index m = u.size();
  const Vec r = u - p.u_d;
  double primal = std::max(0.0, p.b - p.a.dot(u));
  for (Eigen::Index i = 0; i < m; ++i) primal = std::max({primal, p.lo[i] - u[i], u[i] - p.hi[i]});

  if (!halfspace) {
    // lambda = 0; free inputs must sit at u_d, bound inputs need correctly signed multipliers
    double res = primal;
    for (Eigen::Index i = 0; i < m; ++i) {
      const int s = act[static_cast<std::size_t>(i)];
      if (s == 0) res = std::max(res, std::abs(r[i]));
      if (s < 0) res = std::max(res, std::max(0.0, -r[i]));
      if (s > 0) res = std::max(res, std::max(0.0, r[i]));
    }
    return res;
  }

  // r = lambda a + nu_lo - nu_hi with lambda >= 0; pick lambda from the free inputs when possible.
  double lam_lo = 0.0, lam_hi = std::numeric_limits<double>::infinity();
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const int s = act[static_cast<std::size_t>(i)];
    if (s == 0) {
      num += r[i] * p.a[i];
      den += p.a[i] * p.a[i];
    } else if (p.a[i] != 0.0) {
      // s < 0 needs r_i - lambda a_i >= 0, s > 0 needs r_i - lambda a_i <= 0
      const double t = r[i] / p.a[i];
      const bool upper_limit = (s < 0) == (p.a[i] > 0);
      if (upper_limit) lam_hi = std::min(lam_hi, t);
      else lam_lo = std::max(lam_lo, t);
    }
  }
  double lambda;
  if (den > 0) lambda = std::max(0.0, num / den);
  else lambda = lam_lo <= lam_hi ? lam_lo : 0.5 * (lam_lo + lam_hi);

  double res = primal;
  res = std::max(res, std::abs(p.a.dot(u) - p.b) * (lambda > 0 ? 1.0 : 0.0));
  for (Eigen::Index i = 0; i < m; ++i) {
    const int s = act[static_cast<std::size_t>(i)];
    const double nu = r[i] - lambda * p.a[i];
    if (s == 0) res = std::max(res, std::abs(nu));
    if (s < 0) res = std::max(res, std::max(0.0, -nu));
    if (s > 0) res = std::max(res, std::max(0.0, nu));
  }
  return res;
}

}  // namespace detail

/// Exact solution of the filter QP. Never relaxes the halfspace: an empty feasible
/// set returns the box point maximizing a'u with status Infeasible.
inline FilterResult solve_qp(const FilterProblem & p)
{
  const Eigen::Index m = p.u_d.size();
  if (p.a.size() != m || p.lo.size() != m || p.hi.size() != m) throw ConfigError("solve_qp: size mismatch");
  if (m == 0 || m > 8) throw ConfigError("solve_qp: between 1 and 8 inputs supported");

  FilterResult res;
  res.value = p.value;
  res.bound_activity.assign(static_cast<std::size_t>(m), 0);

  const bool ud_in_box = (p.u_d - p.lo).minCoeff() >= 0 && (p.hi - p.u_d).minCoeff() >= 0;
  if (ud_in_box && p.a.dot(p.u_d) >= p.b) {
    res.u_out = p.u_d;
    res.slack = p.a.dot(p.u_d) - p.b;
    return res;
  }

  double best_support = 0.0;
  Vec u_max(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    u_max[i] = p.a[i] > 0 ? p.hi[i] : (p.a[i] < 0 ? p.lo[i] : 0.5 * (p.lo[i] + p.hi[i]));
    best_support += p.a[i] * u_max[i];
  }
  const double feas_tol = 1e-12 * std::max({1.0, std::abs(p.b), p.a.cwiseAbs().dot(p.hi - p.lo)});
  if (best_support < p.b - feas_tol) {
    res.status = FilterStatus::Infeasible;
    res.u_out = u_max;
    res.intervened = (u_max - p.u_d).norm() > kFilterInterventionTol;
    res.kkt_residual = p.b - best_support;
    res.slack = best_support - p.b;
    for (Eigen::Index i = 0; i < m; ++i) res.bound_activity[static_cast<std::size_t>(i)] = p.a[i] > 0 ? 1 : (p.a[i] < 0 ? -1 : 0);
    res.halfspace_active = true;
    return res;
  }

  std::size_t combos = 1;
  for (Eigen::Index i = 0; i < m; ++i) combos *= 3;
  double best_obj = std::numeric_limits<double>::infinity();
  std::vector<int> act(static_cast<std::size_t>(m)), best_act;
  bool best_half = false;
  Vec u(m), best_u;

  for (int half = 0; half < 2; ++half) {
    for (std::size_t c = 0; c < combos; ++c) {
      std::size_t code = c;
      double a_free_sq = 0.0, fixed_dot = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        act[static_cast<std::size_t>(i)] = static_cast<int>(code % 3) - 1;
        code /= 3;
        const int s = act[static_cast<std::size_t>(i)];
        u[i] = s < 0 ? p.lo[i] : (s > 0 ? p.hi[i] : p.u_d[i]);
        if (s == 0) a_free_sq += p.a[i] * p.a[i];
        else fixed_dot += p.a[i] * u[i];
      }
      if (half == 1) {
        if (a_free_sq == 0.0) continue;
        double free_dot = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
          if (act[static_cast<std::size_t>(i)] == 0) free_dot += p.a[i] * p.u_d[i];
        }
        const double lambda = (p.b - fixed_dot - free_dot) / a_free_sq;
        for (Eigen::Index i = 0; i < m; ++i) {
          if (act[static_cast<std::size_t>(i)] == 0) u[i] = p.u_d[i] + lambda * p.a[i];
        }
      }
      bool ok = p.a.dot(u) >= p.b - feas_tol;
      for (Eigen::Index i = 0; i < m && ok; ++i) ok = u[i] >= p.lo[i] && u[i] <= p.hi[i];
      if (!ok) continue;
      const double obj = (u - p.u_d).squaredNorm();
      if (obj < best_obj) {
        best_obj = obj;
        best_u = u;
        best_act = act;
        best_half = half == 1;
      }
    }
  }
  if (best_u.size() == 0) {
    // only reachable through rounding at a degenerate vertex; the support point is feasible
    best_u = u_max;
    best_act.assign(static_cast<std::size_t>(m), 0);
    best_half = true;
  }

  res.u_out = best_u;
  res.bound_activity = best_act;
  res.halfspace_active = best_half;
  res.slack = p.a.dot(best_u) - p.b;
  res.intervened = (best_u - p.u_d).norm() > kFilterInterventionTol;
  res.kkt_residual = detail::kkt_residual(p, best_u, best_act, best_half);
  return res;
}

inline FilterResult filter_step(const ValueSource & source, const SystemModel & sys, const Vec & x, const Vec & u_d,
                                const FilterConfig & cfg = {})
{
  const auto t0 = std::chrono::steady_clock::now();
  const double tau = cfg.tau < 0 ? source.horizon() : cfg.tau;
  const auto prob = build_problem(source, sys, x, tau, u_d, cfg.gamma, cfg.time_term);
  auto res = solve_qp(prob);
  res.intervened = (res.u_out - u_d).norm() > cfg.intervention_tol;
  res.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace pmpsafe
