#pragma once

/**
 * @file
 * @brief Grid solver for the discounted barrier value function in one to three dimensions.
 *
 * Time variable is time-to-go tau. V(x, 0) = l(x) and, for tau > 0,
 *   min{ l(x) - V, -dV/dtau + H(x, grad V) + gamma V } = 0,
 *   H(x, p) = p'f(x) + max_u p'g(x)u,
 * marched explicitly with a Lax-Friedrichs numerical Hamiltonian.
 */

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "errors.hpp"
#include "system_model.hpp"
#include "value_types.hpp"

namespace pmpsafe {

struct GridAxis
{
  double min{0};
  double max{1};
  std::size_t count{2};

  double spacing() const { return (max - min) / static_cast<double>(count - 1); }
  double coord(std::size_t i) const { return min + static_cast<double>(i) * spacing(); }
};

struct GridValueFunction
{
  std::vector<GridAxis> axes;
  /// time-to-go of each stored slice, ascending, taus[0] == 0
  std::vector<double> taus;
  /// slice-major values, first axis varies slowest within a slice
  std::vector<std::vector<double>> slices;
  double gamma{0};
  /// internal march step
  double dt{0};
  std::string system_id;

  std::size_t dims() const { return axes.size(); }
  double horizon() const { return taus.empty() ? 0.0 : taus.back(); }

  std::size_t num_nodes() const
  {
    std::size_t n = 1;
    for (const auto & a : axes) n *= a.count;
    return n;
  }

  std::size_t stride(std::size_t axis) const
  {
    std::size_t s = 1;
    for (std::size_t i = axis + 1; i < axes.size(); ++i) s *= axes[i].count;
    return s;
  }

  std::size_t flat(const std::vector<std::size_t> & idx) const
  {
    std::size_t k = 0;
    for (std::size_t i = 0; i < axes.size(); ++i) k = k * axes[i].count + idx[i];
    return k;
  }

  std::vector<std::size_t> multi(std::size_t k) const
  {
    std::vector<std::size_t> idx(axes.size());
    for (std::size_t i = axes.size(); i-- > 0;) {
      idx[i] = k % axes[i].count;
      k /= axes[i].count;
    }
    return idx;
  }

  Vec node(std::size_t k) const
  {
    const auto idx = multi(k);
    Vec x(static_cast<Eigen::Index>(axes.size()));
    for (std::size_t i = 0; i < axes.size(); ++i) x[static_cast<Eigen::Index>(i)] = axes[i].coord(idx[i]);
    return x;
  }

  void validate() const
  {
    if (axes.empty() || axes.size() > 3) throw ConfigError("grid: 1 to 3 dimensions supported");
    for (const auto & a : axes) {
      if (a.count < 3 || !(a.max > a.min)) throw ConfigError("grid: every axis needs max > min and at least 3 nodes");
    }
    if (taus.empty() || taus.size() != slices.size() || taus.front() != 0.0) {
      throw ConfigError("grid: slices must start at tau = 0 and match the time list");
    }
    for (std::size_t k = 1; k < taus.size(); ++k) {
      if (!(taus[k] > taus[k - 1])) throw ConfigError("grid: slice times must increase");
    }
    for (const auto & s : slices) {
      if (s.size() != num_nodes()) throw ConfigError("grid: slice size does not match the axes");
    }
  }
};

struct GridSolveOptions
{
  /// number of stored slices including tau = 0
  std::size_t n_slices{101};
  /// for gamma = 0 also enforce V(tau + dtau) <= V(tau); this is the monotone BRT form
  bool monotone_projection{true};
};

namespace detail {

struct NodeDynamics
{
  std::vector<double> f;  // n per node
  std::vector<double> g;  // n*m per node, row-major
  std::vector<double> l;
};

inline NodeDynamics sample_dynamics(const SystemModel & sys, const GridValueFunction & vf)
{
  const std::size_t N = vf.num_nodes(), n = vf.dims(), m = static_cast<std::size_t>(sys.control_dim);
  NodeDynamics d;
  d.f.resize(N * n);
  d.g.resize(N * n * m);
  d.l.resize(N);
  for (std::size_t k = 0; k < N; ++k) {
    const Vec x = vf.node(k);
    const Vec f = sys.f(x);
    const Mat G = sys.g(x);
    for (std::size_t i = 0; i < n; ++i) {
      d.f[k * n + i] = f[static_cast<Eigen::Index>(i)];
      for (std::size_t j = 0; j < m; ++j) {
        d.g[(k * n + i) * m + j] = G(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      }
    }
    d.l[k] = sys.h(x);
  }
  return d;
}

/// max_u v'u for the system's control set, allocation-free.
inline double support(const ControlSet & cs, const double * v, std::size_t m)
{
  double s = 0.0;
  if (cs.kind == ControlSet::Kind::Box) {
    for (std::size_t j = 0; j < m; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      s += cs.center[jj] * v[j] + cs.bounds[jj] * std::abs(v[j]);
    }
    return s;
  }
  double nn = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    s += cs.center[static_cast<Eigen::Index>(j)] * v[j];
    nn += v[j] * v[j];
  }
  return s + cs.radius() * std::sqrt(nn);
}

}  // namespace detail

/**
 * @brief Time-march the value function on a uniform grid.
 *
 * Dissipation coefficients alpha_i = max over the grid of |dH/dp_i| are fixed
 * before marching. The step satisfies dtau * sum_i alpha_i / dx_i <= cfl.
 * Boundary nodes use linearly extrapolated ghost values.
 */
inline GridValueFunction solve_cbvf(const SystemModel & sys, const std::vector<GridAxis> & axes, double gamma,
                                    double horizon, double cfl = 0.9, const GridSolveOptions & opts = {})
{
  if (sys.state_dim > 3) throw ConfigError("solve_cbvf: state dimension above 3 is not tractable on a grid");
  if (static_cast<Eigen::Index>(axes.size()) != sys.state_dim) throw ConfigError("solve_cbvf: one axis per state");
  if (!(cfl > 0 && cfl <= 1)) throw ConfigError("solve_cbvf: cfl must lie in (0, 1]");
  if (!(gamma >= 0)) throw ConfigError("solve_cbvf: gamma must be non-negative");
  if (!(horizon >= 0)) throw ConfigError("solve_cbvf: horizon must be non-negative");
  if (opts.n_slices < 2 && horizon > 0) throw ConfigError("solve_cbvf: need at least two slices");

  GridValueFunction vf;
  vf.axes = axes;
  vf.gamma = gamma;
  vf.system_id = sys.name;
  vf.taus = {0.0};
  vf.slices.emplace_back();
  {
    GridValueFunction probe = vf;
    probe.slices[0].assign(vf.num_nodes(), 0.0);
    probe.validate();
  }
  if (sys.boundary) {
    const auto & b = *sys.boundary;
    const auto & a = axes[static_cast<std::size_t>(b.index)];
    if (a.min > b.lower || a.max < b.upper) throw ConfigError("solve_cbvf: grid does not contain the safe set");
  }

  const std::size_t N = vf.num_nodes(), n = vf.dims(), m = static_cast<std::size_t>(sys.control_dim);
  const auto dyn = detail::sample_dynamics(sys, vf);
  vf.slices[0] = dyn.l;

  std::vector<double> alpha(n, 0.0), dx(n);
  std::vector<std::size_t> strides(n);
  for (std::size_t i = 0; i < n; ++i) {
    dx[i] = axes[i].spacing();
    strides[i] = vf.stride(i);
  }
  for (std::size_t k = 0; k < N; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      double gi = 0.0;
      const double * grow = &dyn.g[(k * n + i) * m];
      if (sys.control_set.kind == ControlSet::Kind::Box) {
        for (std::size_t j = 0; j < m; ++j) gi += std::abs(grow[j]) * sys.control_set.bounds[static_cast<Eigen::Index>(j)];
      } else {
        double s = 0;
        for (std::size_t j = 0; j < m; ++j) s += grow[j] * grow[j];
        gi = sys.control_set.radius() * std::sqrt(s);
      }
      alpha[i] = std::max(alpha[i], std::abs(dyn.f[k * n + i]) + gi);
    }
  }
  double rate = 0.0;
  for (std::size_t i = 0; i < n; ++i) rate += alpha[i] / dx[i];

  if (horizon == 0.0) return vf;

  const double slice_dt = horizon / static_cast<double>(opts.n_slices - 1);
  const double dt_max = rate > 0 ? cfl / rate : slice_dt;
  const auto substeps = static_cast<std::size_t>(std::ceil(slice_dt / dt_max - 1e-12));
  const double dt = slice_dt / static_cast<double>(substeps);
  vf.dt = dt;

  std::vector<std::size_t> coord(N * n);
  for (std::size_t k = 0; k < N; ++k) {
    const auto idx = vf.multi(k);
    for (std::size_t i = 0; i < n; ++i) coord[k * n + i] = idx[i];
  }

  std::vector<double> V = dyn.l, Vn(N);
  std::array<double, 3> p{};
  std::vector<double> v(m);
  std::size_t step = 0;
  for (std::size_t s = 1; s < opts.n_slices; ++s) {
    for (std::size_t sub = 0; sub < substeps; ++sub, ++step) {
      for (std::size_t k = 0; k < N; ++k) {
        double diss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t c = coord[k * n + i], st = strides[i], cnt = axes[i].count;
          if (c == 0) {
            p[i] = (V[k + st] - V[k]) / dx[i];
          } else if (c + 1 == cnt) {
            p[i] = (V[k] - V[k - st]) / dx[i];
          } else {
            p[i] = (V[k + st] - V[k - st]) / (2.0 * dx[i]);
            diss += alpha[i] * (V[k + st] - 2.0 * V[k] + V[k - st]) / (2.0 * dx[i]);
          }
        }
        double H = 0.0;
        for (std::size_t i = 0; i < n; ++i) H += p[i] * dyn.f[k * n + i];
        for (std::size_t j = 0; j < m; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i) acc += dyn.g[(k * n + i) * m + j] * p[i];
          v[j] = acc;
        }
        H += detail::support(sys.control_set, v.data(), m);
        double next = V[k] + dt * (H + diss + gamma * V[k]);
        next = std::min(next, dyn.l[k]);
        if (gamma == 0.0 && opts.monotone_projection) next = std::min(next, V[k]);
        if (!std::isfinite(next)) throw NumericalBlowup("solve_cbvf: non-finite value", step);
        Vn[k] = next;
      }
      V.swap(Vn);
    }
    vf.taus.push_back(static_cast<double>(s) * slice_dt);
    vf.slices.push_back(V);
  }
  vf.taus.back() = horizon;
  return vf;
}

namespace detail {

inline void check_domain(const GridValueFunction & vf, const Vec & x, double tau)
{
  if (static_cast<std::size_t>(x.size()) != vf.dims()) throw ConfigError("grid query: wrong dimension");
  const double eps = 1e-12;
  for (std::size_t i = 0; i < vf.dims(); ++i) {
    const auto & a = vf.axes[i];
    const double xi = x[static_cast<Eigen::Index>(i)];
    const double tol = eps * std::max(1.0, std::abs(a.max - a.min));
    if (!(xi >= a.min - tol && xi <= a.max + tol)) throw ExtrapolationError("grid query: state outside the grid");
  }
  if (!(tau >= -1e-12 && tau <= vf.horizon() + 1e-12)) throw ExtrapolationError("grid query: time-to-go outside horizon");
}

/// Multilinear interpolation of one slice (x assumed inside the grid).
inline double interp_slice(const GridValueFunction & vf, const std::vector<double> & slice, const Vec & x)
{
  const std::size_t n = vf.dims();
  std::array<std::size_t, 3> base{};
  std::array<double, 3> w{};
  for (std::size_t i = 0; i < n; ++i) {
    const auto & a = vf.axes[i];
    const double t = (x[static_cast<Eigen::Index>(i)] - a.min) / a.spacing();
    auto c = static_cast<std::ptrdiff_t>(std::floor(t));
    c = std::clamp<std::ptrdiff_t>(c, 0, static_cast<std::ptrdiff_t>(a.count) - 2);
    base[i] = static_cast<std::size_t>(c);
    w[i] = std::clamp(t - static_cast<double>(c), 0.0, 1.0);
  }
  double out = 0.0;
  for (std::size_t corner = 0; corner < (std::size_t{1} << n); ++corner) {
    double weight = 1.0;
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t bit = (corner >> (n - 1 - i)) & 1u;
      weight *= bit ? w[i] : 1.0 - w[i];
      k = k * vf.axes[i].count + base[i] + bit;
    }
    if (weight != 0.0) out += weight * slice[k];
  }
  return out;
}

/// Bracketing slices and weight of the upper one.
inline std::pair<std::size_t, double> bracket(const GridValueFunction & vf, double tau)
{
  if (vf.taus.size() == 1) return {0, 0.0};
  const auto it = std::upper_bound(vf.taus.begin(), vf.taus.end(), tau);
  std::size_t hi = static_cast<std::size_t>(it - vf.taus.begin());
  hi = std::clamp<std::size_t>(hi, 1, vf.taus.size() - 1);
  const std::size_t lo = hi - 1;
  const double w = std::clamp((tau - vf.taus[lo]) / (vf.taus[hi] - vf.taus[lo]), 0.0, 1.0);
  return {lo, w};
}

inline double interp(const GridValueFunction & vf, const Vec & x, double tau)
{
  const auto [lo, w] = bracket(vf, tau);
  const double v0 = interp_slice(vf, vf.slices[lo], x);
  if (w == 0.0 || vf.taus.size() == 1) return v0;
  return (1.0 - w) * v0 + w * interp_slice(vf, vf.slices[lo + 1], x);
}

}  // namespace detail

/// Value, spatial gradient and time-to-go derivative at (x, tau). Throws ExtrapolationError outside the domain.
inline ValueAndGradients eval_value_and_gradients(const GridValueFunction & vf, const Vec & x, double tau)
{
  detail::check_domain(vf, x, tau);
  ValueAndGradients out;
  out.value = detail::interp(vf, x, tau);
  out.grad_x.resize(x.size());
  for (std::size_t i = 0; i < vf.dims(); ++i) {
    const auto & a = vf.axes[i];
    const auto ii = static_cast<Eigen::Index>(i);
    const double h = 0.5 * a.spacing();
    Vec xp = x, xm = x;
    xp[ii] = std::min(x[ii] + h, a.max);
    xm[ii] = std::max(x[ii] - h, a.min);
    out.grad_x[ii] = (detail::interp(vf, xp, tau) - detail::interp(vf, xm, tau)) / (xp[ii] - xm[ii]);
  }
  if (vf.taus.size() > 1) {
    const auto [lo, w] = detail::bracket(vf, tau);
    (void)w;
    out.dV_dtau = (detail::interp_slice(vf, vf.slices[lo + 1], x) - detail::interp_slice(vf, vf.slices[lo], x)) /
                  (vf.taus[lo + 1] - vf.taus[lo]);
  }
  return out;
}

/// Values of the grid at every node for time-to-go tau (linear in tau between slices).
inline std::vector<double> slice_at(const GridValueFunction & vf, double tau)
{
  if (!(tau >= -1e-12 && tau <= vf.horizon() + 1e-12)) throw ExtrapolationError("grid: time-to-go outside horizon");
  const auto [lo, w] = detail::bracket(vf, tau);
  if (w == 0.0) return vf.slices[lo];
  std::vector<double> out(vf.num_nodes());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = (1.0 - w) * vf.slices[lo][k] + w * vf.slices[lo + 1][k];
  return out;
}

/**
 * @brief Tolerance band around the zero level: 2 * sum_i dx_i * L_i.
 *
 * L_i is the largest absolute difference quotient along axis i over the grid
 * cells touching the cell that contains x (a local Lipschitz estimate).
 */
inline double boundary_band(const GridValueFunction & vf, const Vec & x, double tau)
{
  detail::check_domain(vf, x, tau);
  const auto V = slice_at(vf, tau);
  const std::size_t n = vf.dims();
  std::array<std::size_t, 3> lo{}, hi{};
  for (std::size_t i = 0; i < n; ++i) {
    const auto & a = vf.axes[i];
    const auto c = static_cast<std::ptrdiff_t>(std::floor((x[static_cast<Eigen::Index>(i)] - a.min) / a.spacing()));
    lo[i] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(c - 1, 0, static_cast<std::ptrdiff_t>(a.count) - 1));
    hi[i] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(c + 2, 0, static_cast<std::ptrdiff_t>(a.count) - 1));
  }
  double band = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t st = vf.stride(i);
    double L = 0.0;
    // iterate the neighbourhood box
    std::vector<std::size_t> cur(lo.begin(), lo.begin() + static_cast<std::ptrdiff_t>(n));
    while (true) {
      if (cur[i] < hi[i]) {
        const std::size_t k = vf.flat(cur);
        L = std::max(L, std::abs(V[k + st] - V[k]) / vf.axes[i].spacing());
      }
      std::size_t d = n;
      while (d-- > 0) {
        if (cur[d] < hi[d]) {
          ++cur[d];
          break;
        }
        cur[d] = lo[d];
      }
      if (d == static_cast<std::size_t>(-1)) break;
    }
    band += vf.axes[i].spacing() * L;
  }
  return 2.0 * band;
}

/// Ordered polylines of the zero level set, one per connected component; 3D grids are contoured slice by slice along the last axis.
struct LevelSet
{
  std::vector<std::vector<Vec>> components;

  std::size_t num_points() const
  {
    std::size_t c = 0;
    for (const auto & p : components) c += p.size();
    return c;
  }
};

namespace detail {

/// Marching squares on a 2D array (row-major, nx by ny); returns polylines in index coordinates.
inline std::vector<std::vector<std::array<double, 2>>> marching_squares(const std::vector<double> & V, std::size_t nx,
                                                                        std::size_t ny)
{
  // edge key: horizontal edge (i,j)-(i+1,j) -> 2*(i*ny+j), vertical edge (i,j)-(i,j+1) -> 2*(i*ny+j)+1
  auto val = [&](std::size_t i, std::size_t j) { return V[i * ny + j]; };
  auto inside = [&](std::size_t i, std::size_t j) { return val(i, j) >= 0.0; };
  std::map<std::size_t, std::array<double, 2>> point;
  std::map<std::size_t, std::vector<std::size_t>> adj;

  auto edge_point = [&](std::size_t key) {
    if (point.count(key)) return;
    const std::size_t base = key / 2;
    const std::size_t i = base / ny, j = base % ny;
    const bool horiz = key % 2 == 0;
    const std::size_t i2 = horiz ? i + 1 : i, j2 = horiz ? j : j + 1;
    const double a = val(i, j), b = val(i2, j2);
    const double t = a / (a - b);
    point[key] = {static_cast<double>(i) + (horiz ? t : 0.0), static_cast<double>(j) + (horiz ? 0.0 : t)};
  };
  auto link = [&](std::size_t a, std::size_t b) {
    edge_point(a);
    edge_point(b);
    adj[a].push_back(b);
    adj[b].push_back(a);
  };

  for (std::size_t i = 0; i + 1 < nx; ++i) {
    for (std::size_t j = 0; j + 1 < ny; ++j) {
      const bool c00 = inside(i, j), c10 = inside(i + 1, j), c11 = inside(i + 1, j + 1), c01 = inside(i, j + 1);
      // edges in counter-clockwise order: bottom (j), right (i+1), top (j+1), left (i)
      const std::size_t eb = 2 * (i * ny + j), er = 2 * ((i + 1) * ny + j) + 1, et = 2 * (i * ny + j + 1),
                        el = 2 * (i * ny + j) + 1;
      std::vector<std::size_t> cut;
      if (c00 != c10) cut.push_back(eb);
      if (c10 != c11) cut.push_back(er);
      if (c11 != c01) cut.push_back(et);
      if (c01 != c00) cut.push_back(el);
      if (cut.size() == 2) {
        link(cut[0], cut[1]);
      } else if (cut.size() == 4) {
        const double center = 0.25 * (val(i, j) + val(i + 1, j) + val(i + 1, j + 1) + val(i, j + 1));
        // join edges so the centre's side stays connected
        if ((center >= 0.0) == c00) {
          link(eb, er);
          link(et, el);
        } else {
          link(eb, el);
          link(er, et);
        }
      }
    }
  }

  std::vector<std::vector<std::array<double, 2>>> out;
  std::map<std::size_t, bool> used;
  auto walk = [&](std::size_t start) {
    std::vector<std::array<double, 2>> line{point[start]};
    used[start] = true;
    std::size_t cur = start;
    while (true) {
      std::size_t next = static_cast<std::size_t>(-1);
      for (std::size_t nb : adj[cur]) {
        if (!used[nb]) {
          next = nb;
          break;
        }
      }
      if (next == static_cast<std::size_t>(-1)) break;
      used[next] = true;
      line.push_back(point[next]);
      cur = next;
    }
    return line;
  };
  // open polylines start at degree-1 ends, closed loops anywhere
  for (const auto & [key, nbs] : adj) {
    if (nbs.size() == 1 && !used[key]) out.push_back(walk(key));
  }
  for (const auto & [key, nbs] : adj) {
    if (!used[key]) {
      auto line = walk(key);
      line.push_back(line.front());
      out.push_back(std::move(line));
    }
  }
  return out;
}

}  // namespace detail

/// Zero level set of V(., tau).
inline LevelSet zero_level_set(const GridValueFunction & vf, double tau)
{
  const auto V = slice_at(vf, tau);
  LevelSet ls;
  const std::size_t n = vf.dims();
  auto to_state = [&](const std::array<double, 2> & ij, std::size_t a0, std::size_t a1, Vec x) {
    x[static_cast<Eigen::Index>(a0)] = vf.axes[a0].min + ij[0] * vf.axes[a0].spacing();
    x[static_cast<Eigen::Index>(a1)] = vf.axes[a1].min + ij[1] * vf.axes[a1].spacing();
    return x;
  };
  if (n == 1) {
    const auto & a = vf.axes[0];
    for (std::size_t i = 0; i + 1 < a.count; ++i) {
      if ((V[i] >= 0) != (V[i + 1] >= 0)) {
        const double t = V[i] / (V[i] - V[i + 1]);
        Vec x(1);
        x[0] = a.min + (static_cast<double>(i) + t) * a.spacing();
        ls.components.push_back({x});
      }
    }
  } else if (n == 2) {
    for (const auto & line : detail::marching_squares(V, vf.axes[0].count, vf.axes[1].count)) {
      std::vector<Vec> pts;
      for (const auto & ij : line) pts.push_back(to_state(ij, 0, 1, Vec::Zero(2)));
      ls.components.push_back(std::move(pts));
    }
  } else {
    const std::size_t nx = vf.axes[0].count, ny = vf.axes[1].count, nz = vf.axes[2].count;
    for (std::size_t kz = 0; kz < nz; ++kz) {
      std::vector<double> plane(nx * ny);
      for (std::size_t i = 0; i < nx; ++i)
        for (std::size_t j = 0; j < ny; ++j) plane[i * ny + j] = V[(i * ny + j) * nz + kz];
      Vec base = Vec::Zero(3);
      base[2] = vf.axes[2].coord(kz);
      for (const auto & line : detail::marching_squares(plane, nx, ny)) {
        std::vector<Vec> pts;
        for (const auto & ij : line) pts.push_back(to_state(ij, 0, 1, base));
        ls.components.push_back(std::move(pts));
      }
    }
  }
  return ls;
}

/// CSV with columns component, x0, x1, ...
inline void write_level_set_csv(const LevelSet & ls, const std::string & path, const std::vector<std::string> & names = {})
{
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out.precision(17);
  const std::size_t n = ls.components.empty() || ls.components[0].empty() ? names.size()
                                                                           : static_cast<std::size_t>(ls.components[0][0].size());
  out << "component";
  for (std::size_t i = 0; i < n; ++i) out << ',' << (i < names.size() ? names[i] : "x" + std::to_string(i));
  out << '\n';
  for (std::size_t c = 0; c < ls.components.size(); ++c) {
    for (const auto & p : ls.components[c]) {
      out << c;
      for (Eigen::Index i = 0; i < p.size(); ++i) out << ',' << p[i];
      out << '\n';
    }
  }
}

// ---------------------------------------------------------------------------------------------
// Binary container.
//
//   "CBVFGRID" | u32 version | u32 dims | dims x (f64 min, f64 max, u64 count)
//   | f64 gamma | f64 dt | u64 system_id hash | u32 id length | id bytes
//   | u64 n_slices | n_slices x f64 tau | payload: n_slices x nodes x f64
// All integers and doubles little-endian.

inline constexpr std::uint32_t kGridFormatVersion = 1;

inline std::uint64_t fnv1a(const std::string & s)
{
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace detail {

inline void put_u64(std::ostream & o, std::uint64_t v)
{
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  o.write(b, 8);
}
inline void put_u32(std::ostream & o, std::uint32_t v)
{
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  o.write(b, 4);
}
inline void put_f64(std::ostream & o, double v) { put_u64(o, std::bit_cast<std::uint64_t>(v)); }

inline std::uint64_t get_u64(std::istream & in)
{
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char *>(b), 8)) throw ConfigError("grid file: truncated");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
inline std::uint32_t get_u32(std::istream & in)
{
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char *>(b), 4)) throw ConfigError("grid file: truncated");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
inline double get_f64(std::istream & in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace detail

inline void write_grid(const GridValueFunction & vf, std::ostream & out)
{
  vf.validate();
  out.write("CBVFGRID", 8);
  detail::put_u32(out, kGridFormatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(vf.dims()));
  for (const auto & a : vf.axes) {
    detail::put_f64(out, a.min);
    detail::put_f64(out, a.max);
    detail::put_u64(out, a.count);
  }
  detail::put_f64(out, vf.gamma);
  detail::put_f64(out, vf.dt);
  detail::put_u64(out, fnv1a(vf.system_id));
  detail::put_u32(out, static_cast<std::uint32_t>(vf.system_id.size()));
  out.write(vf.system_id.data(), static_cast<std::streamsize>(vf.system_id.size()));
  detail::put_u64(out, vf.taus.size());
  for (double t : vf.taus) detail::put_f64(out, t);
  for (const auto & s : vf.slices)
    for (double v : s) detail::put_f64(out, v);
}

inline GridValueFunction read_grid(std::istream & in)
{
  char magic[8];
  if (!in.read(magic, 8) || std::string(magic, 8) != "CBVFGRID") throw ConfigError("grid file: bad magic");
  const auto version = detail::get_u32(in);
  if (version != kGridFormatVersion) throw VersionError("grid file: unsupported version " + std::to_string(version));
  GridValueFunction vf;
  const auto dims = detail::get_u32(in);
  if (dims == 0 || dims > 3) throw ConfigError("grid file: bad dimension count");
  for (std::uint32_t i = 0; i < dims; ++i) {
    GridAxis a;
    a.min = detail::get_f64(in);
    a.max = detail::get_f64(in);
    a.count = detail::get_u64(in);
    vf.axes.push_back(a);
  }
  vf.gamma = detail::get_f64(in);
  vf.dt = detail::get_f64(in);
  const auto hash = detail::get_u64(in);
  const auto len = detail::get_u32(in);
  vf.system_id.resize(len);
  if (len > 0 && !in.read(vf.system_id.data(), len)) throw ConfigError("grid file: truncated");
  if (fnv1a(vf.system_id) != hash) throw ConfigError("grid file: system id hash mismatch");
  const auto ns = detail::get_u64(in);
  for (std::uint64_t k = 0; k < ns; ++k) vf.taus.push_back(detail::get_f64(in));
  const std::size_t N = vf.num_nodes();
  vf.slices.assign(ns, std::vector<double>(N));
  for (auto & s : vf.slices)
    for (double & v : s) v = detail::get_f64(in);
  vf.validate();
  return vf;
}

inline void save_grid(const GridValueFunction & vf, const std::string & path)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  write_grid(vf, out);
}

inline GridValueFunction load_grid(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  return read_grid(in);
}

}  // namespace pmpsafe
