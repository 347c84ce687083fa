#pragma once

/**
 * @file
 * @brief Self-supervised training of ValueNet on the variational inequality residual.
 *
 * One epoch is one minibatch Adam step. Phases: pretraining at tau = 0,
 * curriculum with a linearly growing time-to-go window [0, w], and finetuning
 * over the full horizon. Samples come from a dataset generated once per run;
 * interior time stamps are redrawn every step inside the current window and
 * PMP time stamps are clamped to it.
 */

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "sampling.hpp"
#include "value_net.hpp"

namespace pmpsafe {

enum class SamplingStrategy { UniformOnly, PmpAugmented };
enum class LrSchedule { Constant, Cosine };

struct TrainConfig
{
  NetArchitecture arch;
  Vec box_lo;
  Vec box_hi;
  double horizon{1.0};
  double gamma{0.1};

  int pretrain_epochs{500};
  int curriculum_epochs{4000};
  int finetune_epochs{500};
  int batch_size{256};

  double lr{1e-3};
  double lr_min{1e-5};
  LrSchedule schedule{LrSchedule::Cosine};
  double beta1{0.9};
  double beta2{0.999};
  double adam_eps{1e-8};

  /// curriculum window grows from [0, curriculum_start] to [0, horizon]
  double curriculum_start{0.0};

  SamplingStrategy strategy{SamplingStrategy::PmpAugmented};
  std::size_t dataset_size{20000};
  double interior_fraction{0.4};
  double noise{0.10};
  PmpPoolOptions pmp;

  std::uint64_t seed{0};
  /// loss above this multiple of the first-epoch loss aborts training
  double divergence_factor{1e3};

  int total_epochs() const { return pretrain_epochs + curriculum_epochs + finetune_epochs; }

  void validate() const
  {
    if (pretrain_epochs < 0 || curriculum_epochs < 0 || finetune_epochs < 0) {
      throw ConfigError("train: epoch counts must be non-negative");
    }
    if (batch_size <= 0) throw ConfigError("train: batch size must be positive");
    if (!(horizon > 0)) throw ConfigError("train: horizon must be positive");
    if (!(lr > 0) || lr_min < 0) throw ConfigError("train: learning rates must be positive");
    if (dataset_size == 0) throw ConfigError("train: dataset size must be positive");
    if (curriculum_start < 0 || curriculum_start > horizon) throw ConfigError("train: curriculum start outside horizon");
  }

  /// Right end of the time-to-go window at a given epoch; equals the horizon once the curriculum ends.
  double window_end(int epoch) const
  {
    if (epoch < pretrain_epochs) return 0.0;
    const int c = epoch - pretrain_epochs;
    if (c < curriculum_epochs) {
      return curriculum_start + (horizon - curriculum_start) * static_cast<double>(c + 1) / curriculum_epochs;
    }
    return horizon;
  }

  double learning_rate(int epoch) const
  {
    if (schedule == LrSchedule::Constant) return lr;
    const double T = std::max(1, total_epochs());
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + std::cos(std::numbers::pi * epoch / T));
  }
};

struct TrainReport
{
  /// mean |residual| of the minibatch at every epoch
  std::vector<double> residual_trace;
  std::uint64_t weights_checksum{0};
  double wall_time{0};
  std::uint64_t seed{0};
  std::size_t pmp_pool_size{0};
};

class Adam
{
public:
  Adam(std::size_t n, double b1, double b2, double eps) : m_(n, 0.0), v_(n, 0.0), b1_(b1), b2_(b2), eps_(eps) {}

  void step(std::vector<double> & p, const std::vector<double> & g, double lr)
  {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * g[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * g[i] * g[i];
      p[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

private:
  std::vector<double> m_, v_;
  double b1_, b2_, eps_;
  int t_{0};
};

inline DatasetConfig dataset_config_for(const TrainConfig & cfg)
{
  DatasetConfig d;
  d.count = cfg.dataset_size;
  d.interior_fraction = cfg.interior_fraction;
  d.boundary_fraction = 1.0 - cfg.interior_fraction;
  d.mode = cfg.strategy == SamplingStrategy::PmpAugmented ? BoundaryMode::Pmp : BoundaryMode::Uniform;
  d.noise = cfg.noise;
  d.horizon = cfg.horizon;
  d.box_lo = cfg.box_lo;
  d.box_hi = cfg.box_hi;
  d.seed = cfg.seed;
  d.pmp = cfg.pmp;
  return d;
}

/// Train a fresh network. Deterministic in cfg.seed; single-threaded.
inline std::pair<ValueNet, TrainReport> train(const SystemModel & sys, const TrainConfig & cfg)
{
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  ValueNet net(sys, cfg.arch, {cfg.box_lo, cfg.box_hi, cfg.horizon}, cfg.seed);
  const SampleBatch data = generate_dataset(sys, dataset_config_for(cfg));

  std::vector<const Sample *> interior, boundary;
  for (const auto & s : data.entries) (s.source == SampleSource::Interior ? interior : boundary).push_back(&s);

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  Adam opt(net.num_params(), cfg.beta1, cfg.beta2, cfg.adam_eps);
  TrainReport rep;
  rep.seed = cfg.seed;
  rep.pmp_pool_size = boundary.size();
  rep.residual_trace.reserve(static_cast<std::size_t>(cfg.total_epochs()));

  const auto B = static_cast<Eigen::Index>(cfg.batch_size);
  const auto n_boundary = static_cast<Eigen::Index>(boundary_count(static_cast<std::size_t>(B), 1.0 - cfg.interior_fraction));
  Mat X(sys.state_dim, B);
  Eigen::RowVectorXd tau(B);
  double first_loss = -1;

  for (int epoch = 0; epoch < cfg.total_epochs(); ++epoch) {
    const double w = cfg.window_end(epoch);
    std::uniform_real_distribution<double> tau_dist(0.0, w);
    for (Eigen::Index b = 0; b < B; ++b) {
      const bool bnd = b < n_boundary && !boundary.empty();
      const auto & pool = bnd ? boundary : interior;
      const Sample & s = *pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
      X.col(b) = s.state;
      if (bnd && s.source == SampleSource::PmpBoundary) {
        tau[b] = std::min(s.time_to_go, w);
      } else {
        tau[b] = w > 0 ? tau_dist(rng) : 0.0;
      }
    }
    const auto res = residual_loss(net, sys, X, tau, cfg.gamma);
    if (!std::isfinite(res.loss)) throw TrainingDiverged("train: non-finite loss at epoch " + std::to_string(epoch));
    if (first_loss < 0) first_loss = std::max(res.loss, 1e-12);
    if (res.loss > cfg.divergence_factor * first_loss) {
      throw TrainingDiverged("train: loss exceeded the divergence threshold at epoch " + std::to_string(epoch));
    }
    rep.residual_trace.push_back(res.loss);
    opt.step(net.params(), res.grad, cfg.learning_rate(epoch));
  }

  rep.weights_checksum = weights_checksum(net.params());
  rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(net), std::move(rep)};
}

/// Mean |residual| of a network over uniformly drawn (x, tau) in the box and full horizon.
inline double mean_residual(const ValueNet & net, const SystemModel & sys, const Vec & lo, const Vec & hi,
                            double gamma, std::size_t count, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  Mat X(lo.size(), static_cast<Eigen::Index>(count));
  Eigen::RowVectorXd tau(static_cast<Eigen::Index>(count));
  std::uniform_real_distribution<double> td(0.0, net.horizon());
  for (Eigen::Index b = 0; b < X.cols(); ++b) {
    for (Eigen::Index i = 0; i < lo.size(); ++i) X(i, b) = std::uniform_real_distribution<double>(lo[i], hi[i])(rng);
    tau[b] = td(rng);
  }
  return residual_loss(net, sys, X, tau, gamma, false).loss;
}

// ---------------------------------------------------------------------------------------------
// JSON form of a training configuration. Missing keys keep their defaults.

inline nlohmann::json to_json(const TrainConfig & c)
{
  return {{"hidden", c.arch.hidden},
          {"omega0", c.arch.omega0},
          {"box_lo", detail::to_std(c.box_lo)},
          {"box_hi", detail::to_std(c.box_hi)},
          {"horizon", c.horizon},
          {"gamma", c.gamma},
          {"pretrain_epochs", c.pretrain_epochs},
          {"curriculum_epochs", c.curriculum_epochs},
          {"finetune_epochs", c.finetune_epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"lr_min", c.lr_min},
          {"schedule", c.schedule == LrSchedule::Cosine ? "cosine" : "constant"},
          {"curriculum_start", c.curriculum_start},
          {"strategy", c.strategy == SamplingStrategy::PmpAugmented ? "pmp" : "uniform"},
          {"dataset_size", c.dataset_size},
          {"interior_fraction", c.interior_fraction},
          {"noise", c.noise},
          {"pmp_starts", c.pmp.search.n_starts},
          {"pmp_dt", c.pmp.dt},
          {"seed", c.seed}};
}

inline SamplingStrategy parse_strategy(const std::string & s)
{
  if (s == "pmp") return SamplingStrategy::PmpAugmented;
  if (s == "uniform") return SamplingStrategy::UniformOnly;
  throw ConfigError("unknown sampling strategy '" + s + "' (expected uniform or pmp)");
}

inline TrainConfig train_config_from_json(const nlohmann::json & j, TrainConfig c = {})
{
  try {
    auto get = [&](const char * k, auto & v) {
      if (j.contains(k)) v = j.at(k).get<std::decay_t<decltype(v)>>();
    };
    get("hidden", c.arch.hidden);
    get("omega0", c.arch.omega0);
    if (j.contains("box_lo")) c.box_lo = detail::from_std(j.at("box_lo").get<std::vector<double>>());
    if (j.contains("box_hi")) c.box_hi = detail::from_std(j.at("box_hi").get<std::vector<double>>());
    get("horizon", c.horizon);
    get("gamma", c.gamma);
    get("pretrain_epochs", c.pretrain_epochs);
    get("curriculum_epochs", c.curriculum_epochs);
    get("finetune_epochs", c.finetune_epochs);
    get("batch_size", c.batch_size);
    get("lr", c.lr);
    get("lr_min", c.lr_min);
    if (j.contains("schedule")) {
      const auto s = j.at("schedule").get<std::string>();
      if (s != "cosine" && s != "constant") throw ConfigError("unknown learning-rate schedule '" + s + "'");
      c.schedule = s == "cosine" ? LrSchedule::Cosine : LrSchedule::Constant;
    }
    get("curriculum_start", c.curriculum_start);
    if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy").get<std::string>());
    get("dataset_size", c.dataset_size);
    get("interior_fraction", c.interior_fraction);
    get("noise", c.noise);
    get("pmp_starts", c.pmp.search.n_starts);
    get("pmp_dt", c.pmp.dt);
    get("seed", c.seed);
  } catch (const nlohmann::json::exception & e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  return c;
}

}  // namespace pmpsafe
