#pragma once

/**
 * @file
 * @brief Boundary trajectories from the maximum principle.
 *
 * Trajectories that barely stay in S = {h >= 0} are projections of abnormal
 * extremals of the minimum-time hitting problem. They end on the boundary
 * with h(x_T) = 0, p_T = grad h(x_T) and zero Hamiltonian (tangency), and are
 * recovered by integrating the state-costate system backward from such points.
 *
 * Time convention: tau is time-to-go, tau = 0 at the boundary touch.
 */

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <deque>
#include <optional>
#include <random>
#include <vector>

#include "control_set.hpp"
#include "errors.hpp"
#include "system_model.hpp"

namespace pmpsafe {

/// State-costate trajectory ordered forward in time: times[0] is the largest time-to-go, times.back() == 0.
struct Extremal
{
  std::vector<double> times;
  std::vector<Vec> states;
  std::vector<Vec> costates;
  std::vector<Vec> controls;
  /// abnormal multiplier, always 0 for emitted extremals
  double p0{0.0};
  std::vector<double> hamiltonian_trace;
  /// integration stopped early because the state left the sampling region
  bool truncated{false};

  std::size_t size() const { return times.size(); }
};

struct TerminalSolveReport
{
  bool converged{false};
  int iterations{0};
  double h_res{0};
  double p_res{0};
  double tangency_res{0};
  Vec x_T;
  Vec p_T;
};

struct TerminalSolveOptions
{
  int max_iterations{500};
  /// first trial step; later trials use the Barzilai-Borwein step when bb_steps is set
  double step_size{1.0};
  bool line_search{true};
  bool bb_steps{true};
  /// non-monotone Armijo memory (1 = monotone)
  int memory{10};
  double armijo{1e-4};
  double h_tol{1e-8};
  double p_tol{1e-8};
  double tangency_tol{1e-8};
  double fd_step{1e-7};
  /// optional box the iterates are projected onto (projected gradient descent)
  std::optional<Vec> region_lo;
  std::optional<Vec> region_hi;
};

namespace detail {

inline Vec terminal_residual(const SystemModel & sys, const Vec & x)
{
  const Vec gh = sys.grad_h(x);
  const Vec u = closed_form_maximizer(sys.g(x).transpose() * gh, sys.control_set);
  Vec r(2);
  r << sys.h(x), gh.dot(sys.xdot(x, u));
  return r;
}

inline Mat residual_jacobian(const SystemModel & sys, const Vec & x, double step)
{
  Mat J(2, x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double hj = step * std::max(1.0, std::abs(x[j]));
    Vec xp = x, xm = x;
    xp[j] += hj;
    xm[j] -= hj;
    J.col(j) = (terminal_residual(sys, xp) - terminal_residual(sys, xm)) / (2.0 * hj);
  }
  return J;
}

}  // namespace detail

/**
 * @brief Find a boundary point satisfying the terminal conditions by gradient descent.
 *
 * The costate is eliminated through p_T := grad h(x_T), so the unknown is x_T
 * alone and the objective is 0.5 (h(x)^2 + (grad h' (f + g u))^2) with u the
 * closed-form maximizer of (g' grad h)' u. Steps follow the negative gradient
 * with Barzilai-Borwein lengths and a non-monotone Armijo backtracking test.
 * Non-convergence is reported, never thrown.
 */
inline TerminalSolveReport solve_terminal_conditions(const SystemModel & sys, const Vec & x_init,
                                                     const TerminalSolveOptions & opts = {})
{
  sys.check_state(x_init);
  TerminalSolveReport rep;
  Vec x = x_init;

  auto objective = [&](const Vec & y, Vec & r) {
    r = detail::terminal_residual(sys, y);
    return 0.5 * r.squaredNorm();
  };
  auto done = [&](const Vec & r) { return std::abs(r[0]) <= opts.h_tol && std::abs(r[1]) <= opts.tangency_tol; };

  auto project = [&](Vec y) {
    if (opts.region_lo) y = y.cwiseMax(*opts.region_lo);
    if (opts.region_hi) y = y.cwiseMin(*opts.region_hi);
    return y;
  };

  Vec r;
  double phi = objective(x, r);
  std::deque<double> history{phi};
  Vec grad = detail::residual_jacobian(sys, x, opts.fd_step).transpose() * r;
  Vec x_prev, grad_prev;
  double step = opts.step_size;

  int it = 0;
  while (!done(r) && it < opts.max_iterations) {
    ++it;
    if (opts.bb_steps && x_prev.size() > 0) {
      const Vec s = x - x_prev;
      const Vec y = grad - grad_prev;
      const double sy = s.dot(y);
      step = sy > 0 ? std::clamp(s.squaredNorm() / sy, 1e-10, 1e10) : opts.step_size;
    }
    if (grad.squaredNorm() == 0.0) break;
    const double ref = *std::max_element(history.begin(), history.end());
    Vec x_new = project(x - step * grad);
    Vec r_new;
    double phi_new = objective(x_new, r_new);
    if (opts.line_search) {
      int shrink = 0;
      while (!(phi_new <= ref - opts.armijo * grad.dot(x - x_new)) && shrink < 60) {
        step *= 0.5;
        x_new = project(x - step * grad);
        phi_new = objective(x_new, r_new);
        ++shrink;
      }
    }
    x_prev = x;
    grad_prev = grad;
    x = x_new;
    r = r_new;
    phi = phi_new;
    history.push_back(phi);
    if (static_cast<int>(history.size()) > std::max(1, opts.memory)) history.pop_front();
    grad = detail::residual_jacobian(sys, x, opts.fd_step).transpose() * r;
  }

  rep.iterations = it;
  rep.x_T = x;
  rep.p_T = sys.grad_h(x);
  rep.h_res = std::abs(r[0]);
  rep.p_res = (rep.p_T - sys.grad_h(x)).norm();
  rep.tangency_res = std::abs(r[1]);
  rep.converged = rep.h_res <= opts.h_tol && rep.p_res <= opts.p_tol && rep.tangency_res <= opts.tangency_tol;
  return rep;
}

struct ExtremalOptions
{
  /// Hamiltonian tolerance; when unset, 1e-6 (1 + |p_T| |f(x_T)|)
  std::optional<double> ham_tol;
  /// sampling region; integration stops before the first node outside it
  std::optional<Vec> region_lo;
  std::optional<Vec> region_hi;
  /// |v_j| at or below this is a switching point of component j
  double switch_tol{1e-12};
};

namespace detail {

/// Backward-time derivative of (x, p): d/dtau x = -(f + g u), d/dtau p = (df/dx + d(gu)/dx)' p.
inline std::pair<Vec, Vec> backward_rhs(const SystemModel & sys, const Vec & x, const Vec & p, const Vec & u)
{
  const Vec dx = -sys.xdot(x, u);
  const Vec dp = (sys.jac_f(x) + sys.jac_gu(x, u)).transpose() * p;
  return {dx, dp};
}

}  // namespace detail

/**
 * @brief Maximizing control along an extremal.
 *
 * Components with v_j = (g' p)_j on a switching point take the sign of the
 * backward rate of v_j, i.e. the one-sided limit the extremal leaves the
 * switching point with. This matters at the terminal node, where g' grad h
 * often vanishes identically.
 */
inline Vec extremal_control(const SystemModel & sys, const Vec & x, const Vec & p, double switch_tol = 1e-12)
{
  const Mat G = sys.g(x);
  const Vec v = G.transpose() * p;
  Vec u = closed_form_maximizer(v, sys.control_set);
  if (sys.control_set.kind != ControlSet::Kind::Box) return u;

  const double scale = std::max(1.0, p.norm() * G.norm());
  bool any = false;
  for (Eigen::Index j = 0; j < v.size(); ++j) any = any || std::abs(v[j]) <= switch_tol * scale;
  if (!any) return u;

  // components on a switching point sit at the center while the rate is evaluated
  Vec u0 = u;
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    if (std::abs(v[j]) <= switch_tol * scale) u0[j] = sys.control_set.center[j];
  }
  const auto [dx, dp] = detail::backward_rhs(sys, x, p, u0);
  const auto dG = sys.jac_g(x);
  Vec dv = G.transpose() * dp;
  for (Eigen::Index k = 0; k < x.size(); ++k) dv += dG[static_cast<std::size_t>(k)].transpose() * p * dx[k];
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    if (std::abs(v[j]) > switch_tol * scale) continue;
    const double c = sys.control_set.center[j], b = sys.control_set.bounds[j];
    u[j] = dv[j] > 0 ? c + b : (dv[j] < 0 ? c - b : c);
  }
  return u;
}

/**
 * @brief RK4 integration of the state-costate system backward from (x_T, p_T).
 *
 * The control is recomputed at every stage. Nodes are checked against the
 * Hamiltonian tolerance; drift throws IntegrationDrift.
 */
inline Extremal integrate_extremal_backward(const SystemModel & sys, const Vec & x_T, const Vec & p_T, double horizon,
                                            double dt, const ExtremalOptions & opts = {})
{
  sys.check_state(x_T);
  if (!(horizon >= 0)) throw ConfigError("integrate_extremal_backward: horizon must be non-negative");
  if (!(dt > 0)) throw ConfigError("integrate_extremal_backward: dt must be positive");

  const double ham_tol = opts.ham_tol.value_or(1e-6 * (1.0 + p_T.norm() * sys.f(x_T).norm()));
  auto inside = [&](const Vec & x) {
    if (opts.region_lo && (x - *opts.region_lo).minCoeff() < 0) return false;
    if (opts.region_hi && (*opts.region_hi - x).minCoeff() < 0) return false;
    return true;
  };
  auto ctrl = [&](const Vec & x, const Vec & p) { return extremal_control(sys, x, p, opts.switch_tol); };
  auto rhs = [&](const Vec & x, const Vec & p) { return detail::backward_rhs(sys, x, p, ctrl(x, p)); };

  Extremal ext;
  std::vector<double> taus;
  auto push = [&](double tau, const Vec & x, const Vec & p) {
    // stored control is the plain closed-form maximizer (center on ties)
    const Vec u = closed_form_maximizer(sys.g(x).transpose() * p, sys.control_set);
    const double H = hamiltonian(sys, x, p, u);
    if (!(std::abs(H) <= ham_tol)) {
      throw IntegrationDrift("extremal: Hamiltonian drift beyond tolerance (reduce dt)", ext.states.size(), H);
    }
    taus.push_back(tau);
    ext.states.push_back(x);
    ext.costates.push_back(p);
    ext.controls.push_back(u);
    ext.hamiltonian_trace.push_back(H);
  };

  push(0.0, x_T, p_T);
  const auto steps = static_cast<long>(std::ceil(horizon / dt - 1e-9));
  Vec x = x_T, p = p_T;
  for (long k = 1; k <= steps; ++k) {
    const double tau = std::min(horizon, static_cast<double>(k) * dt);
    const double h = tau - taus.back();
    const auto [k1x, k1p] = rhs(x, p);
    const auto [k2x, k2p] = rhs(x + 0.5 * h * k1x, p + 0.5 * h * k1p);
    const auto [k3x, k3p] = rhs(x + 0.5 * h * k2x, p + 0.5 * h * k2p);
    const auto [k4x, k4p] = rhs(x + h * k3x, p + h * k3p);
    const Vec xn = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
    const Vec pn = p + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
    if (!inside(xn)) {
      ext.truncated = true;
      break;
    }
    x = xn;
    p = pn;
    push(tau, x, p);
  }

  // forward-time order: largest time-to-go first
  std::reverse(taus.begin(), taus.end());
  std::reverse(ext.states.begin(), ext.states.end());
  std::reverse(ext.costates.begin(), ext.costates.end());
  std::reverse(ext.controls.begin(), ext.controls.end());
  std::reverse(ext.hamiltonian_trace.begin(), ext.hamiltonian_trace.end());
  ext.times = std::move(taus);
  return ext;
}

struct BoundarySearchOptions
{
  int n_starts{32};
  double dedupe_tol{1e-6};
  bool dedupe{true};
  TerminalSolveOptions solve;
};

/// Converged terminal solves from random starts in [lo, hi] intersected with S, iterates kept in [lo, hi].
inline std::vector<TerminalSolveReport> find_boundary_points(const SystemModel & sys, const Vec & lo, const Vec & hi,
                                                            std::mt19937_64 & rng,
                                                            const BoundarySearchOptions & opts = {})
{
  std::vector<TerminalSolveReport> roots;
  int attempts = 0;
  int starts = 0;
  while (starts < opts.n_starts && attempts < 100 * opts.n_starts) {
    ++attempts;
    Vec x0(lo.size());
    for (Eigen::Index i = 0; i < lo.size(); ++i) x0[i] = std::uniform_real_distribution<double>(lo[i], hi[i])(rng);
    if (sys.h(x0) < 0) continue;
    ++starts;
    TerminalSolveOptions so = opts.solve;
    if (!so.region_lo) so.region_lo = lo;
    if (!so.region_hi) so.region_hi = hi;
    auto rep = solve_terminal_conditions(sys, x0, so);
    if (!rep.converged) continue;
    const bool dup = opts.dedupe && std::any_of(roots.begin(), roots.end(), [&](const TerminalSolveReport & r) {
                       return (r.x_T - rep.x_T).norm() < opts.dedupe_tol;
                     });
    if (!dup) roots.push_back(std::move(rep));
  }
  return roots;
}

}  // namespace pmpsafe
