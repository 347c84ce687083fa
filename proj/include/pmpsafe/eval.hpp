#pragma once

/**
 * @file
 * @brief Desk-scale metrics: closed-loop failure rate, IOU against a grid oracle,
 * and a multi-seed comparison table of sampling strategies.
 *
 * A rollout fails when h(x) < 0 at any tick. Rollouts run at a fixed tick
 * (100 Hz by default) with the filtered input held over the tick and integrated
 * by RK4 sub-steps.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "corridor.hpp"
#include "errors.hpp"
#include "hj_grid.hpp"
#include "safety_filter.hpp"
#include "train.hpp"
#include "value_source.hpp"

namespace pmpsafe {

/// Desired input as a function of time, state and rollout index.
using NominalPolicy = std::function<Vec(double t, const Vec & x, std::size_t rollout)>;

/**
 * Corridor racer: proportional steering toward a target line that wanders
 * across, and past, both edges. The target offset and phase differ per rollout.
 */
inline NominalPolicy corridor_racer(const SystemModel & sys, double target_amplitude = 4.5, double period = 2.0,
                                    double k_e = 0.05, double k_phi = 0.4, std::uint64_t seed = 0)
{
  const double ubar = sys.control_set.upper()[0];
  return [=](double t, const Vec & x, std::size_t rollout) {
    std::mt19937_64 r(seed ^ (0x9e3779b97f4a7c15ull * (rollout + 1)));
    const double offset = std::uniform_real_distribution<double>(-target_amplitude, target_amplitude)(r);
    const double phase = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(r);
    const double target = offset + 0.5 * target_amplitude * std::sin(2.0 * std::numbers::pi * t / period + phase);
    const double u = k_e * (target - x[0]) - k_phi * x[1];
    return Vec::Constant(1, std::clamp(u, -ubar, ubar));
  };
}

/// Steers toward the nearer edge at full authority.
inline NominalPolicy corridor_edge_seeker(const SystemModel & sys)
{
  const double ubar = sys.control_set.upper()[0];
  return [ubar](double, const Vec & x, std::size_t) { return Vec::Constant(1, x[0] >= 0 ? ubar : -ubar); };
}

struct RolloutConfig
{
  std::size_t n_rollouts{500};
  /// seconds; non-positive means the value source horizon
  double horizon{-1.0};
  double tick{0.01};
  int substeps{4};
  std::uint64_t seed{0};
  /// starts need V(x0, T_h) >= start_margin
  double start_margin{0.0};
  /// starts also need h(x0) >= 0, so a start already violating the constraint is never drawn
  bool starts_in_constraint_set{true};
  /// start box; empty means the value source domain
  Vec start_lo;
  Vec start_hi;
  int max_start_attempts{100000};
  bool filter_enabled{true};
  FilterConfig filter;
};

struct FailureReport
{
  double failure_rate{0};
  std::size_t failures{0};
  std::size_t rollouts{0};
  std::size_t interventions{0};
  std::size_t infeasible_steps{0};
  /// ticks at which the value source could not be evaluated (unfiltered input applied)
  std::size_t out_of_domain_steps{0};
  std::vector<double> filter_wall_times;
  std::vector<Vec> starts;
};

/// Uniform draws from {V(x, T_h) >= margin} within a box, optionally also inside {h >= 0}.
inline std::vector<Vec> sample_safe_starts(const ValueSource & src, const Vec & lo, const Vec & hi, std::size_t count,
                                           double margin, std::uint64_t seed, int max_attempts,
                                           const std::function<double(const Vec &)> & h = {})
{
  std::mt19937_64 rng(seed);
  std::vector<Vec> out;
  out.reserve(count);
  const double T = src.horizon();
  for (std::size_t k = 0; k < count; ++k) {
    bool found = false;
    for (int a = 0; a < max_attempts && !found; ++a) {
      Vec x(lo.size());
      for (Eigen::Index i = 0; i < lo.size(); ++i) x[i] = std::uniform_real_distribution<double>(lo[i], hi[i])(rng);
      if ((!h || h(x) >= 0) && src.eval(x, T).value >= margin) {
        out.push_back(std::move(x));
        found = true;
      }
    }
    if (!found) {
      throw DegenerateSafeSet("no initial state with V >= " + std::to_string(margin) + " after " +
                              std::to_string(max_attempts) + " draws");
    }
  }
  return out;
}

inline FailureReport failure_rate(const ValueSource & src, const SystemModel & sys, const NominalPolicy & policy,
                                  const RolloutConfig & cfg)
{
  if (cfg.n_rollouts == 0) throw ConfigError("failure_rate: need at least one rollout");
  if (!(cfg.tick > 0) || cfg.substeps < 1) throw ConfigError("failure_rate: bad tick or sub-step count");
  const Vec lo = cfg.start_lo.size() ? cfg.start_lo : src.lo();
  const Vec hi = cfg.start_hi.size() ? cfg.start_hi : src.hi();
  const double horizon = cfg.horizon > 0 ? cfg.horizon : src.horizon();
  const auto ticks = static_cast<long>(std::llround(horizon / cfg.tick));

  FailureReport rep;
  rep.starts = sample_safe_starts(src, lo, hi, cfg.n_rollouts, cfg.start_margin, cfg.seed, cfg.max_start_attempts,
                                  cfg.starts_in_constraint_set ? sys.h : std::function<double(const Vec &)>{});
  rep.rollouts = cfg.n_rollouts;
  rep.filter_wall_times.reserve(cfg.n_rollouts * static_cast<std::size_t>(ticks));

  for (std::size_t r = 0; r < cfg.n_rollouts; ++r) {
    Vec x = rep.starts[r];
    bool failed = sys.h(x) < 0;
    for (long k = 0; k < ticks && !failed; ++k) {
      const double t = static_cast<double>(k) * cfg.tick;
      const Vec u_d = policy(t, x, r);
      Vec u = u_d;
      if (cfg.filter_enabled) {
        try {
          const auto fr = filter_step(src, sys, x, u_d, cfg.filter);
          u = fr.u_out;
          rep.filter_wall_times.push_back(fr.wall_time);
          rep.interventions += fr.intervened ? 1 : 0;
          rep.infeasible_steps += fr.status == FilterStatus::Infeasible ? 1 : 0;
        } catch (const ExtrapolationError &) {
          ++rep.out_of_domain_steps;
        }
      }
      const double h = cfg.tick / cfg.substeps;
      for (int s = 0; s < cfg.substeps; ++s) x = rk4_step(sys, x, u, h);
      failed = sys.h(x) < 0;
    }
    rep.failures += failed ? 1 : 0;
  }
  rep.failure_rate = static_cast<double>(rep.failures) / static_cast<double>(rep.rollouts);
  return rep;
}

/// Intersection over union of {V_source >= 0} and {V_oracle >= 0} over the oracle's nodes at tau.
inline double iou(const ValueSource & src, const GridValueFunction & oracle, double tau)
{
  const auto slice = slice_at(oracle, tau);
  std::size_t inter = 0, uni = 0;
  for (std::size_t k = 0; k < oracle.num_nodes(); ++k) {
    const bool a = src.eval(oracle.node(k), tau).value >= 0;
    const bool b = slice[k] >= 0;
    inter += (a && b) ? 1 : 0;
    uni += (a || b) ? 1 : 0;
  }
  if (uni == 0) throw DomainError("iou: both safe sets are empty on the grid");
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------------------------
// Statistics and the comparison table

struct MeanSd
{
  double mean{0};
  double sd{0};
};

/// Mean and unbiased standard deviation of the finite entries; sd is NaN for fewer than two.
inline MeanSd mean_sd(const std::vector<double> & all)
{
  std::vector<double> v;
  for (double d : all) {
    if (std::isfinite(d)) v.push_back(d);
  }
  if (v.empty()) return {std::nan(""), std::nan("")};
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return {m, std::nan("")};
  double ss = 0.0;
  for (double d : v) ss += (d - m) * (d - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

/// Linear-interpolation quantile of a copy of the data.
inline double quantile(std::vector<double> v, double q)
{
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const std::size_t j = std::min(i + 1, v.size() - 1);
  return v[i] + (pos - static_cast<double>(i)) * (v[j] - v[i]);
}

inline std::uint64_t config_hash(const nlohmann::json & j)
{
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

struct SweepCell
{
  std::string label;
  TrainConfig train;
};

struct EvalRow
{
  std::string label;
  std::string strategy;
  int epochs{0};
  std::size_t samples{0};
  double horizon{0};
  std::vector<std::uint64_t> seeds;
  std::vector<double> failure_rates;
  std::vector<double> ious;
  std::vector<std::uint64_t> diverged_seeds;
  /// learned safe set empty in the start box: failure rate undefined (NaN) and left out of the mean
  std::vector<std::uint64_t> degenerate_seeds;
  MeanSd failure;
  MeanSd iou;
  double wall_p50{0}, wall_p90{0}, wall_p99{0}, wall_max{0};
  std::uint64_t config_hash{0};
};

struct EvalReport
{
  std::vector<EvalRow> rows;
};

struct CompareOptions
{
  RolloutConfig rollout;
  /// time-to-go at which IOU is measured; negative means the training horizon
  double iou_tau{-1.0};
  /// called after every (cell, seed) with the trained net, for saving models or progress output
  std::function<void(const SweepCell &, std::uint64_t, const ValueNet &, const TrainReport &)> on_trained;
};

/**
 * Train every (cell, seed), then evaluate failure rate under `policy` and IOU against `oracle`.
 * Divergent trainings are listed per row and left out of the means.
 */
inline EvalReport compare_strategies(const SystemModel & sys, const std::vector<SweepCell> & cells,
                                     const std::vector<std::uint64_t> & seeds, const GridValueFunction & oracle,
                                     const NominalPolicy & policy, const CompareOptions & opts = {})
{
  if (seeds.size() < 2) throw ConfigError("compare_strategies: at least two seeds");
  if (cells.empty()) throw ConfigError("compare_strategies: no configurations");
  std::map<std::size_t, EvalRow> table;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto & cell = cells[c];
    EvalRow row;
    row.label = cell.label;
    row.strategy = cell.train.strategy == SamplingStrategy::PmpAugmented ? "pmp" : "uniform";
    row.epochs = cell.train.total_epochs();
    row.samples = cell.train.dataset_size;
    row.horizon = cell.train.horizon;
    auto cj = to_json(cell.train);
    cj.erase("seed");
    row.config_hash = config_hash(cj);
    std::vector<double> walls;
    for (auto seed : seeds) {
      TrainConfig tc = cell.train;
      tc.seed = seed;
      try {
        auto [net, rep] = train(sys, tc);
        if (opts.on_trained) opts.on_trained(cell, seed, net, rep);
        const auto shared = std::make_shared<const ValueNet>(std::move(net));
        const auto src = net_source(shared, true);
        RolloutConfig rc = opts.rollout;
        rc.seed = opts.rollout.seed ^ (seed * 0x2545f4914f6cdd1dull);
        rc.filter.gamma = tc.gamma;
        rc.start_lo = tc.box_lo;
        rc.start_hi = tc.box_hi;
        double fr = std::nan("");
        try {
          const auto f = failure_rate(src, sys, policy, rc);
          fr = f.failure_rate;
          walls.insert(walls.end(), f.filter_wall_times.begin(), f.filter_wall_times.end());
        } catch (const DegenerateSafeSet &) {
          row.degenerate_seeds.push_back(seed);
        }
        row.seeds.push_back(seed);
        row.failure_rates.push_back(fr);
        row.ious.push_back(iou(src, oracle, opts.iou_tau < 0 ? tc.horizon : opts.iou_tau));
      } catch (const TrainingDiverged &) {
        row.diverged_seeds.push_back(seed);
      }
    }
    row.failure = mean_sd(row.failure_rates);
    row.iou = mean_sd(row.ious);
    row.wall_p50 = quantile(walls, 0.5);
    row.wall_p90 = quantile(walls, 0.9);
    row.wall_p99 = quantile(walls, 0.99);
    row.wall_max = walls.empty() ? std::nan("") : *std::max_element(walls.begin(), walls.end());
    table.emplace(c, std::move(row));
  }
  EvalReport out;
  for (auto & [k, r] : table) out.rows.push_back(std::move(r));
  return out;
}

inline nlohmann::json finite_or_null(const std::vector<double> & v)
{
  nlohmann::json a = nlohmann::json::array();
  for (double d : v) a.push_back(std::isfinite(d) ? nlohmann::json(d) : nlohmann::json(nullptr));
  return a;
}

inline nlohmann::json to_json(const EvalReport & rep)
{
  auto num = [](double d) { return std::isfinite(d) ? nlohmann::json(d) : nlohmann::json(nullptr); };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto & r : rep.rows) {
    rows.push_back({{"label", r.label},
                    {"strategy", r.strategy},
                    {"epochs", r.epochs},
                    {"samples", r.samples},
                    {"horizon", r.horizon},
                    {"seeds", r.seeds},
                    {"failure_rates", finite_or_null(r.failure_rates)},
                    {"ious", finite_or_null(r.ious)},
                    {"diverged_seeds", r.diverged_seeds},
                    {"degenerate_seeds", r.degenerate_seeds},
                    {"failure_mean", num(r.failure.mean)},
                    {"failure_sd", num(r.failure.sd)},
                    {"iou_mean", num(r.iou.mean)},
                    {"iou_sd", num(r.iou.sd)},
                    {"wall_time_s", {{"p50", num(r.wall_p50)}, {"p90", num(r.wall_p90)}, {"p99", num(r.wall_p99)}, {"max", num(r.wall_max)}}},
                    {"config_hash", r.config_hash}});
  }
  return {{"schema_version", 1}, {"rows", rows}};
}

inline std::string to_csv(const EvalReport & rep)
{
  std::ostringstream os;
  os.precision(17);
  os << "label,strategy,epochs,samples,horizon,n_seeds,n_diverged,failure_mean,failure_sd,iou_mean,iou_sd,"
        "wall_p50_s,wall_p99_s,config_hash\n";
  for (const auto & r : rep.rows) {
    os << r.label << ',' << r.strategy << ',' << r.epochs << ',' << r.samples << ',' << r.horizon << ','
       << r.seeds.size() << ',' << r.diverged_seeds.size() << ',' << r.failure.mean << ',' << r.failure.sd << ','
       << r.iou.mean << ',' << r.iou.sd << ',' << r.wall_p50 << ',' << r.wall_p99 << ',' << r.config_hash << '\n';
  }
  return os.str();
}

}  // namespace pmpsafe
