#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include <pmpsafe/eval.hpp>

#include "test_support.hpp"

using namespace pmpsafe;
using test::vec;

namespace {

SystemModel corridor() { return kinematic_corridor_model(CorridorConfig{}); }

std::shared_ptr<const GridValueFunction> grid(double gamma)
{
  return std::make_shared<const GridValueFunction>(
      solve_cbvf(corridor(), {{-4.0, 4.0, 101}, {-1.2, 1.2, 101}}, gamma, 1.0, 0.9));
}

const std::shared_ptr<const GridValueFunction> & grid_01()
{
  static const auto g = grid(0.1);
  return g;
}

TrainConfig tiny_config(SamplingStrategy s, int epochs)
{
  TrainConfig c;
  c.box_lo = vec({-4.0, -1.2});
  c.box_hi = vec({4.0, 1.2});
  c.arch.hidden = {16, 16};
  c.pretrain_epochs = epochs / 10;
  c.curriculum_epochs = epochs * 8 / 10;
  c.finetune_epochs = epochs / 10;
  c.dataset_size = 2000;
  c.batch_size = 64;
  c.strategy = s;
  c.pmp.search.n_starts = 8;
  return c;
}

}  // namespace

TEST(FailureRate, GridOracleKeepsEveryRolloutSafe)
{
  const auto sys = corridor();
  const auto src = grid_source(grid_01());
  for (const auto & policy : {corridor_racer(sys), corridor_edge_seeker(sys)}) {
    RolloutConfig rc;
    rc.n_rollouts = 500;
    const auto rep = failure_rate(src, sys, policy, rc);
    EXPECT_EQ(rep.failures, 0u);
    EXPECT_EQ(rep.failure_rate, 0.0);
    EXPECT_GT(rep.interventions, 0u);
    EXPECT_EQ(rep.out_of_domain_steps, 0u);
  }
}

TEST(FailureRate, FilterNeverIncreasesFailures)
{
  const auto sys = corridor();
  const auto src = grid_source(grid_01());
  for (const auto & policy : {corridor_racer(sys), corridor_edge_seeker(sys)}) {
    RolloutConfig rc;
    rc.n_rollouts = 300;
    rc.seed = 9;
    const auto with = failure_rate(src, sys, policy, rc);
    rc.filter_enabled = false;
    const auto without = failure_rate(src, sys, policy, rc);
    ASSERT_EQ(with.starts.size(), without.starts.size());
    for (std::size_t k = 0; k < with.starts.size(); ++k) EXPECT_EQ(with.starts[k], without.starts[k]);
    EXPECT_LE(with.failure_rate, without.failure_rate);
    EXPECT_GT(without.failure_rate, 0.0);
  }
}

TEST(FailureRate, EmptySafeSetIsReported)
{
  const auto sys = corridor();
  const auto src = function_source([](const Vec &, double) { return ValueAndGradients{-1.0, vec({0.0, 0.0}), 0.0}; },
                                   vec({-4.0, -1.2}), vec({4.0, 1.2}), 1.0);
  RolloutConfig rc;
  rc.n_rollouts = 3;
  rc.max_start_attempts = 1000;
  EXPECT_THROW(failure_rate(src, sys, corridor_racer(sys), rc), DegenerateSafeSet);
}

TEST(FailureRate, StartsLieInBothSets)
{
  const auto sys = corridor();
  const auto src = grid_source(grid_01());
  RolloutConfig rc;
  rc.n_rollouts = 200;
  rc.horizon = 0.05;
  rc.start_margin = 0.2;
  const auto rep = failure_rate(src, sys, corridor_racer(sys), rc);
  for (const auto & x : rep.starts) {
    EXPECT_GE(src.eval(x, 1.0).value, 0.2);
    EXPECT_GE(sys.h(x), 0.0);
  }
}

TEST(FailureRate, DeterministicPerSeed)
{
  const auto sys = corridor();
  const auto src = grid_source(grid_01());
  RolloutConfig rc;
  rc.n_rollouts = 50;
  rc.filter_enabled = false;
  const auto a = failure_rate(src, sys, corridor_racer(sys), rc);
  const auto b = failure_rate(src, sys, corridor_racer(sys), rc);
  EXPECT_EQ(a.failures, b.failures);
  EXPECT_EQ(a.starts, b.starts);
}

TEST(FailureRate, RejectsBadConfig)
{
  const auto sys = corridor();
  const auto src = grid_source(grid_01());
  RolloutConfig rc;
  rc.n_rollouts = 0;
  EXPECT_THROW(failure_rate(src, sys, corridor_racer(sys), rc), ConfigError);
  rc.n_rollouts = 1;
  rc.tick = 0.0;
  EXPECT_THROW(failure_rate(src, sys, corridor_racer(sys), rc), ConfigError);
}

TEST(FailureRate, TrainedNetworksBeatUntrainedOnes)
{
  const auto sys = corridor();
  double trained_sum = 0.0, untrained_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    auto c = tiny_config(SamplingStrategy::UniformOnly, 2000);
    c.arch.hidden = {64, 64};
    c.dataset_size = 20000;
    c.batch_size = 256;
    c.seed = seed;
    RolloutConfig rc;
    rc.n_rollouts = 100;
    rc.seed = seed;
    const auto untrained = std::make_shared<const ValueNet>(sys, c.arch, NetNormalization{c.box_lo, c.box_hi, 1.0}, seed);
    untrained_sum += failure_rate(net_source(untrained, true), sys, corridor_racer(sys), rc).failure_rate;
    const auto trained = std::make_shared<const ValueNet>(train(sys, c).first);
    trained_sum += failure_rate(net_source(trained, true), sys, corridor_racer(sys), rc).failure_rate;
  }
  EXPECT_LT(trained_sum, untrained_sum);
}

// ------------------------------------------------------------------------------------------------

TEST(Iou, OracleAgainstItselfIsOne)
{
  EXPECT_EQ(iou(grid_source(grid_01()), *grid_01(), 1.0), 1.0);
  EXPECT_EQ(iou(grid_source(grid_01()), *grid_01(), 0.4), 1.0);
}

TEST(Iou, NegatedOracleIsZero)
{
  const auto g = grid_01();
  const auto neg = function_source(
      [g](const Vec & x, double tau) {
        auto v = eval_value_and_gradients(*g, x, tau);
        // strictly negative wherever the oracle is non-negative, positive elsewhere
        v.value = v.value >= 0 ? -1.0 - v.value : -v.value;
        return v;
      },
      vec({-4.0, -1.2}), vec({4.0, 1.2}), 1.0);
  EXPECT_EQ(iou(neg, *g, 1.0), 0.0);
}

TEST(Iou, SymmetricBetweenGridsOnTheSameLattice)
{
  const auto a = grid(0.0);
  const auto b = grid_01();
  const double ab = iou(grid_source(a), *b, 1.0);
  const double ba = iou(grid_source(b), *a, 1.0);
  EXPECT_EQ(ab, ba);
  EXPECT_GT(ab, 0.5);
  EXPECT_LE(ab, 1.0);
}

TEST(Iou, BothEmptyIsAnError)
{
  auto g = *grid_01();
  for (auto & s : g.slices) std::fill(s.begin(), s.end(), -1.0);
  const auto empty = function_source([](const Vec &, double) { return ValueAndGradients{-2.0, vec({0.0, 0.0}), 0.0}; },
                                     vec({-4.0, -1.2}), vec({4.0, 1.2}), 1.0);
  EXPECT_THROW(iou(empty, g, 1.0), DomainError);
}

// ------------------------------------------------------------------------------------------------

TEST(Statistics, UnbiasedStandardDeviationAndQuantiles)
{
  const auto s = mean_sd({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.sd, std::sqrt(5.0 / 3.0));
  EXPECT_TRUE(std::isnan(mean_sd({1.0}).sd));
  EXPECT_DOUBLE_EQ(mean_sd({1.0, std::nan(""), 3.0}).mean, 2.0);
  EXPECT_DOUBLE_EQ(quantile({3.0, 1.0, 2.0}, 0.5), 2.0);
  EXPECT_DOUBLE_EQ(quantile({0.0, 10.0}, 0.25), 2.5);
  EXPECT_TRUE(std::isnan(quantile({}, 0.5)));
}

TEST(CompareStrategies, OneConfigGivesOneRowAndIsDeterministic)
{
  const auto sys = corridor();
  std::vector<SweepCell> cells{{"uniform-small", tiny_config(SamplingStrategy::UniformOnly, 100)}};
  CompareOptions o;
  o.rollout.n_rollouts = 20;
  const auto a = compare_strategies(sys, cells, {0, 1}, *grid_01(), corridor_racer(sys), o);
  const auto b = compare_strategies(sys, cells, {0, 1}, *grid_01(), corridor_racer(sys), o);
  ASSERT_EQ(a.rows.size(), 1u);
  const auto & r = a.rows[0];
  EXPECT_EQ(r.seeds.size(), 2u);
  EXPECT_EQ(r.failure_rates, b.rows[0].failure_rates);
  EXPECT_EQ(r.ious, b.rows[0].ious);
  EXPECT_EQ(r.config_hash, b.rows[0].config_hash);
  for (double f : r.failure_rates) {
    if (std::isfinite(f)) {
      EXPECT_GE(f, 0.0);
      EXPECT_LE(f, 1.0);
    }
  }
  for (double v : r.ious) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const auto j = to_json(a);
  EXPECT_EQ(j.at("rows").size(), 1u);
  EXPECT_EQ(j.at("rows")[0].at("strategy"), "uniform");
  const auto csv = to_csv(a);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "label,strategy,epochs,samples,horizon,n_seeds,n_diverged,failure_mean,failure_sd,iou_mean,iou_sd,"
            "wall_p50_s,wall_p99_s,config_hash");
}

TEST(CompareStrategies, DivergedSeedsAreFlaggedAndExcluded)
{
  const auto sys = corridor();
  auto c = tiny_config(SamplingStrategy::UniformOnly, 50);
  c.lr = 5.0;
  c.schedule = LrSchedule::Constant;
  c.divergence_factor = 1.5;
  CompareOptions o;
  o.rollout.n_rollouts = 5;
  const auto rep = compare_strategies(sys, {{"diverging", c}}, {0, 1}, *grid_01(), corridor_racer(sys), o);
  EXPECT_EQ(rep.rows[0].diverged_seeds.size(), 2u);
  EXPECT_TRUE(rep.rows[0].seeds.empty());
  EXPECT_TRUE(std::isnan(rep.rows[0].failure.mean));
}

TEST(CompareStrategies, RequiresTwoSeeds)
{
  const auto sys = corridor();
  EXPECT_THROW(compare_strategies(sys, {{"x", tiny_config(SamplingStrategy::UniformOnly, 10)}}, {0}, *grid_01(),
                                  corridor_racer(sys)),
               ConfigError);
}
