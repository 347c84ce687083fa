#pragma once

/**
 * @file
 * @brief Training-sample generation: interior states plus boundary states.
 *
 * Boundary states come either from nodes of backward-integrated extremals
 * (PMP mode) or uniformly from the analytic boundary {x[axis] = lower or upper}
 * (Uniform mode). Every boundary sample has its constrained coordinate
 * perturbed by Uniform(-noise, +noise), which yields both safe and unsafe states.
 */

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "errors.hpp"
#include "pmp.hpp"
#include "system_model.hpp"

namespace pmpsafe {

enum class SampleSource { Interior, PmpBoundary, UniformBoundary, BoundaryPerturbed };
enum class BoundaryMode { Pmp, Uniform };

struct Sample
{
  Vec state;
  double time_to_go{0};
  SampleSource source{SampleSource::Interior};
};

struct SampleBatch
{
  std::vector<Sample> entries;
  std::uint64_t seed{0};

  std::size_t count(SampleSource s) const
  {
    std::size_t c = 0;
    for (const auto & e : entries) c += e.source == s ? 1 : 0;
    return c;
  }
};

/// A boundary-trajectory node with its time-to-go.
struct PoolNode
{
  Vec state;
  double time_to_go{0};
};

struct PmpPoolOptions
{
  BoundarySearchOptions search;
  ExtremalOptions extremal;
  double dt{1e-3};
  /// minimum number of distinct converged terminal points
  int min_roots{1};
  /// extra search rounds before giving up
  int max_retries{5};
};

/**
 * @brief Integrate extremals backward from converged boundary points and pool all nodes.
 *
 * Integration is truncated at the sampling box [lo, hi].
 */
inline std::vector<PoolNode> build_pmp_pool(const SystemModel & sys, const Vec & lo, const Vec & hi, double horizon,
                                            std::mt19937_64 & rng, const PmpPoolOptions & opts = {},
                                            std::vector<Extremal> * extremals_out = nullptr)
{
  std::vector<TerminalSolveReport> roots;
  for (int round = 0; round <= opts.max_retries && static_cast<int>(roots.size()) < opts.min_roots; ++round) {
    auto found = find_boundary_points(sys, lo, hi, rng, opts.search);
    for (auto & r : found) {
      const bool dup = opts.search.dedupe && std::any_of(roots.begin(), roots.end(), [&](const TerminalSolveReport & q) {
                         return (q.x_T - r.x_T).norm() < opts.search.dedupe_tol;
                       });
      if (!dup) roots.push_back(std::move(r));
    }
  }
  if (static_cast<int>(roots.size()) < opts.min_roots) {
    throw InsufficientBoundaryPoints("PMP sampling: only " + std::to_string(roots.size()) +
                                     " converged terminal points after retries");
  }

  ExtremalOptions eo = opts.extremal;
  if (!eo.region_lo) eo.region_lo = lo;
  if (!eo.region_hi) eo.region_hi = hi;

  std::vector<PoolNode> pool;
  for (const auto & r : roots) {
    Extremal ext = integrate_extremal_backward(sys, r.x_T, r.p_T, horizon, opts.dt, eo);
    for (std::size_t k = 0; k < ext.size(); ++k) pool.push_back({ext.states[k], ext.times[k]});
    if (extremals_out) extremals_out->push_back(std::move(ext));
  }
  return pool;
}

struct DatasetConfig
{
  std::size_t count{1000};
  double interior_fraction{0.4};
  double boundary_fraction{0.6};
  BoundaryMode mode{BoundaryMode::Pmp};
  /// half-width of the uniform perturbation on the constrained coordinate
  double noise{0.10};
  double horizon{1.0};
  /// interior time stamps are drawn from [0, window_end]; negative means the full horizon
  double window_end{-1.0};
  Vec box_lo;
  Vec box_hi;
  std::uint64_t seed{0};
  PmpPoolOptions pmp;
  /// rejection cap for interior draws, per sample
  int interior_attempts{10000};
};

namespace detail {

inline void validate(const DatasetConfig & c, const SystemModel & sys)
{
  if (c.count == 0) throw ConfigError("dataset: count must be positive");
  if (c.interior_fraction < 0 || c.boundary_fraction < 0 ||
      std::abs(c.interior_fraction + c.boundary_fraction - 1.0) > 1e-9) {
    throw ConfigError("dataset: mix ratios must be non-negative and sum to 1");
  }
  if (c.box_lo.size() != sys.state_dim || c.box_hi.size() != sys.state_dim || (c.box_hi - c.box_lo).minCoeff() <= 0) {
    throw ConfigError("dataset: sampling box must match the state dimension and be non-empty");
  }
  if (!(c.horizon >= 0)) throw ConfigError("dataset: horizon must be non-negative");
  if (!(c.noise >= 0)) throw ConfigError("dataset: noise must be non-negative");
  if (!sys.boundary) throw ConfigError("dataset: system has no boundary axis to perturb");
}

inline Vec uniform_state(std::mt19937_64 & rng, const Vec & lo, const Vec & hi)
{
  Vec x(lo.size());
  for (Eigen::Index i = 0; i < lo.size(); ++i) x[i] = std::uniform_real_distribution<double>(lo[i], hi[i])(rng);
  return x;
}

}  // namespace detail

/// Number of boundary entries for a mix; rounding favors the interior share.
inline std::size_t boundary_count(std::size_t count, double boundary_fraction)
{
  const double exact = static_cast<double>(count) * boundary_fraction;
  return static_cast<std::size_t>(std::floor(exact + 1e-9));
}

inline Vec sample_interior_state(const SystemModel & sys, std::mt19937_64 & rng, const Vec & lo, const Vec & hi,
                                 int attempts = 10000)
{
  for (int a = 0; a < attempts; ++a) {
    Vec x = detail::uniform_state(rng, lo, hi);
    if (sys.h(x) >= 0) return x;
  }
  throw ConfigError("dataset: sampling box does not intersect the safe set");
}

inline Vec sample_uniform_boundary_state(const SystemModel & sys, std::mt19937_64 & rng, const Vec & lo, const Vec & hi)
{
  Vec x = detail::uniform_state(rng, lo, hi);
  const auto & ax = *sys.boundary;
  x[ax.index] = std::bernoulli_distribution(0.5)(rng) ? ax.upper : ax.lower;
  return x;
}

inline void perturb_boundary(const SystemModel & sys, std::mt19937_64 & rng, Vec & x, double noise)
{
  if (noise > 0) x[sys.boundary->index] += std::uniform_real_distribution<double>(-noise, noise)(rng);
}

/// Deterministic in config.seed.
inline SampleBatch generate_dataset(const SystemModel & sys, const DatasetConfig & cfg)
{
  detail::validate(cfg, sys);
  std::mt19937_64 rng(cfg.seed);
  SampleBatch batch;
  batch.seed = cfg.seed;

  const std::size_t n_boundary = boundary_count(cfg.count, cfg.boundary_fraction);
  const std::size_t n_interior = cfg.count - n_boundary;
  const double window = cfg.window_end < 0 ? cfg.horizon : std::min(cfg.window_end, cfg.horizon);

  std::vector<PoolNode> pool;
  if (cfg.mode == BoundaryMode::Pmp && n_boundary > 0) {
    pool = build_pmp_pool(sys, cfg.box_lo, cfg.box_hi, cfg.horizon, rng, cfg.pmp);
  }

  batch.entries.reserve(cfg.count);
  std::uniform_real_distribution<double> tau_dist(0.0, window);
  for (std::size_t i = 0; i < n_interior; ++i) {
    Vec x = sample_interior_state(sys, rng, cfg.box_lo, cfg.box_hi, cfg.interior_attempts);
    batch.entries.push_back({std::move(x), tau_dist(rng), SampleSource::Interior});
  }
  for (std::size_t i = 0; i < n_boundary; ++i) {
    Sample s;
    if (cfg.mode == BoundaryMode::Pmp) {
      const auto & node = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
      s.state = node.state;
      s.time_to_go = node.time_to_go;
      s.source = SampleSource::PmpBoundary;
    } else {
      s.state = sample_uniform_boundary_state(sys, rng, cfg.box_lo, cfg.box_hi);
      s.time_to_go = std::uniform_real_distribution<double>(0.0, cfg.horizon)(rng);
      s.source = SampleSource::UniformBoundary;
    }
    perturb_boundary(sys, rng, s.state, cfg.noise);
    batch.entries.push_back(std::move(s));
  }
  return batch;
}

}  // namespace pmpsafe
