#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <pmpsafe/corridor.hpp>
#include <pmpsafe/pmp.hpp>
#include <pmpsafe/sampling.hpp>

#include "test_support.hpp"

using namespace pmpsafe;
using test::vec;

namespace {

const Vec kLo = vec({-4.0, -1.2});
const Vec kHi = vec({4.0, 1.2});

// Boundary trajectory of the straight corridor ending tangentially at e = +3 under a hard turn,
// written out by hand: dphi = w tau, e = 3 - (V/w)(1 - cos w tau), p = (-1, -(V/w) sin w tau).
struct CorridorArc
{
  double V, w;
  Vec state(double tau) const { return vec({3.0 - V / w * (1.0 - std::cos(w * tau)), w * tau}); }
  Vec costate(double tau) const { return vec({-1.0, -V / w * std::sin(w * tau)}); }
};

CorridorArc arc_for(const CorridorConfig & c) { return {c.speed, c.speed * c.curvature_bound}; }

}  // namespace

TEST(Maximizer, BoxSignPattern)
{
  const auto box = ControlSet::box(vec({1.0, 1.0}));
  const Vec u = closed_form_maximizer(vec({2.0, -3.0}), box);
  EXPECT_EQ(u, vec({1.0, -1.0}));
}

TEST(Maximizer, BallRadialProjection)
{
  const auto ball = ControlSet::ball(2.0, Vec::Zero(2));
  const Vec u = closed_form_maximizer(vec({3.0, 4.0}), ball);
  EXPECT_NEAR(u[0], 1.2, 1e-15);
  EXPECT_NEAR(u[1], 1.6, 1e-15);
}

TEST(Maximizer, BoxTieGoesToCenterWithoutLosingObjective)
{
  const auto box = ControlSet::box(vec({1.0, 1.0}));
  const Vec v = vec({0.0, 5.0});
  const Vec u = closed_form_maximizer(v, box);
  EXPECT_EQ(u, vec({0.0, 1.0}));
  for (double alt : {-1.0, -0.3, 0.7, 1.0}) EXPECT_EQ(v.dot(vec({alt, 1.0})), v.dot(u));
}

TEST(Maximizer, BallSingularDirectionThrows)
{
  EXPECT_THROW(closed_form_maximizer(vec({0.0, 0.0}), ControlSet::ball(1.0, Vec::Zero(2))), SingularDirection);
}

TEST(Maximizer, PropertyScaleInvariantAndOptimal)
{
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> d(-5, 5), lam(1e-3, 1e3);
  const auto box = ControlSet::box(vec({0.5, 2.0, 1.0}), vec({0.1, -0.2, 0.0}));
  const auto ball = ControlSet::ball(1.5, Vec::Zero(3));
  for (int t = 0; t < 1000; ++t) {
    const Vec v = vec({d(rng), d(rng), d(rng)});
    const double l = lam(rng);
    EXPECT_EQ(closed_form_maximizer(l * v, box), closed_form_maximizer(v, box));
    EXPECT_LE((closed_form_maximizer(l * v, ball) - closed_form_maximizer(v, ball)).norm(), 1e-12);
    // no vertex of the box does better
    const Vec ub = closed_form_maximizer(v, box);
    for (int mask = 0; mask < 8; ++mask) {
      Vec corner = box.center;
      for (int j = 0; j < 3; ++j) corner[j] += ((mask >> j) & 1 ? 1.0 : -1.0) * box.bounds[j];
      EXPECT_LE(v.dot(corner), v.dot(ub) + 1e-12);
    }
    EXPECT_NEAR(v.dot(closed_form_maximizer(v, ball)), ball.support(v), 1e-12);
  }
}

TEST(TerminalSolve, ExactRootHasZeroResiduals)
{
  const auto sys = kinematic_corridor_model(CorridorConfig{});
  const auto rep = solve_terminal_conditions(sys, vec({3.0, 0.0}));
  EXPECT_TRUE(rep.converged);
  EXPECT_EQ(rep.iterations, 0);
  EXPECT_EQ(rep.h_res, 0.0);
  EXPECT_EQ(rep.tangency_res, 0.0);
  EXPECT_EQ(rep.p_T, vec({-1.0, 0.0}));
}

TEST(TerminalSolve, NearbyStartConvergesToTangentRoot)
{
  const auto sys = kinematic_corridor_model(CorridorConfig{});
  const auto rep = solve_terminal_conditions(sys, vec({2.9, 0.1}));
  ASSERT_TRUE(rep.converged);
  EXPECT_LE(rep.iterations, 500);
  EXPECT_LE(rep.h_res, 1e-8);
  EXPECT_LE(rep.p_res, 1e-8);
  EXPECT_LE(rep.tangency_res, 1e-8);
  EXPECT_NEAR(rep.x_T[0], 3.0, 1e-8);
  EXPECT_NEAR(rep.x_T[1], 0.0, 1e-8);
}

TEST(TerminalSolve, IterationCapReportsNonConvergence)
{
  const auto sys = kinematic_corridor_model(CorridorConfig{});
  TerminalSolveOptions o;
  o.max_iterations = 1;
  const auto rep = solve_terminal_conditions(sys, vec({0.5, 0.3}), o);
  EXPECT_FALSE(rep.converged);
  EXPECT_EQ(rep.iterations, 1);
}

TEST(TerminalSolve, FixedStepDescentStillConvergesSlowly)
{
  const auto sys = kinematic_corridor_model(CorridorConfig{});
  TerminalSolveOptions o;
  o.bb_steps = false;
  o.line_search = false;
  o.step_size = 0.009;
  o.max_iterations = 20000;
  const auto rep = solve_terminal_conditions(sys, vec({2.9, 0.1}), o);
  EXPECT_TRUE(rep.converged);
  EXPECT_NEAR(rep.x_T[0], 3.0, 1e-7);
}

TEST(TerminalSolve, RandomStartsOnlyFindAnalyticRoots)
{
  const auto sys = kinematic_corridor_model(CorridorConfig{});
  std::mt19937_64 rng(11);
  BoundarySearchOptions o;
  o.n_starts = 200;
  o.dedupe = false;
  const auto roots = find_boundary_points(sys, kLo, kHi, rng, o);
  EXPECT_GE(roots.size(), 150u);
  for (const auto & r : roots) {
    EXPECT_NEAR(std::abs(r.x_T[0]), 3.0, 1e-8);
    EXPECT_NEAR(r.x_T[1], 0.0, 1e-8);
    EXPECT_LE(r.tangency_res, 1e-8);
  }
  o.dedupe = true;
  std::mt19937_64 rng2(11);
  EXPECT_LE(find_boundary_points(sys, kLo, kHi, rng2, o).size(), 2u);
}

TEST(Extremal, MatchesHandDerivedArcAndHasZeroHamiltonian)
{
  const CorridorConfig cfg;
  const auto sys = kinematic_corridor_model(cfg);
  const auto arc = arc_for(cfg);
  const auto ext = integrate_extremal_backward(sys, vec({3.0, 0.0}), vec({-1.0, 0.0}), 1.0, 1e-3);
  ASSERT_EQ(ext.size(), 1001u);
  EXPECT_EQ(ext.times.front(), 1.0);
  EXPECT_EQ(ext.times.back(), 0.0);
  EXPECT_EQ(ext.p0, 0.0);
  for (std::size_t k = 0; k + 1 < ext.size(); ++k) EXPECT_GT(ext.times[k], ext.times[k + 1]);
  for (std::size_t k = 0; k < ext.size(); ++k) {
    const double tau = ext.times[k];
    EXPECT_LE(std::abs(ext.hamiltonian_trace[k]), 1e-8);
    EXPECT_LE((ext.states[k] - arc.state(tau)).norm(), 1e-10) << "tau=" << tau;
    EXPECT_LE((ext.costates[k] - arc.costate(tau)).norm(), 1e-10) << "tau=" << tau;
    // stored control maximizes p' g u
    const Vec v = sys.g(ext.states[k]).transpose() * ext.costates[k];
    EXPECT_DOUBLE_EQ(v.dot(ext.controls[k]), sys.control_set.support(v));
  }
}

TEST(Extremal, FirstBackwardStepEntersSafeSet)
{
  const auto sys = kinematic_corridor_model(CorridorConfig{});
  for (double sgn : {1.0, -1.0}) {
    const Vec xT = vec({3.0 * sgn, 0.0});
    const auto ext = integrate_extremal_backward(sys, xT, sys.grad_h(xT), 1e-3, 1e-3);
    ASSERT_EQ(ext.size(), 2u);
    EXPECT_GT(sys.h(ext.states[0]), 0.0);
  }
}

TEST(Extremal, ZeroHorizonGivesTerminalNodeOnly)
{
  const auto sys = kinematic_corridor_model(CorridorConfig{});
  const auto ext = integrate_extremal_backward(sys, vec({3.0, 0.0}), vec({-1.0, 0.0}), 0.0, 1e-3);
  ASSERT_EQ(ext.size(), 1u);
  EXPECT_EQ(ext.times[0], 0.0);
  EXPECT_EQ(ext.states[0], vec({3.0, 0.0}));
}

TEST(Extremal, FourthOrderConvergenceUnderStepHalving)
{
  const CorridorConfig cfg;
  const auto sys = kinematic_corridor_model(cfg);
  const auto arc = arc_for(cfg);
  auto err = [&](double dt) {
    const auto ext = integrate_extremal_backward(sys, vec({3.0, 0.0}), vec({-1.0, 0.0}), 1.0, dt);
    double e = 0;
    for (std::size_t k = 0; k < ext.size(); ++k) {
      e = std::max(e, (ext.states[k] - arc.state(ext.times[k])).norm());
      e = std::max(e, (ext.costates[k] - arc.costate(ext.times[k])).norm());
    }
    return e;
  };
  const double e1 = err(0.05), e2 = err(0.025);
  const double order = std::log2(e1 / e2);
  EXPECT_GT(order, 3.7);
  EXPECT_LT(order, 4.3);
}

TEST(Extremal, TurnSegmentKeepsHamiltonianZero)
{
  const CorridorConfig cfg{10.0, 1.0 / 12.0, 1.0 / 24.0, 3.0};
  const auto sys = kinematic_corridor_model(cfg);
  std::mt19937_64 rng(3);
  BoundarySearchOptions o;
  o.n_starts = 20;
  const auto roots = find_boundary_points(sys, kLo, kHi, rng, o);
  ASSERT_FALSE(roots.empty());
  for (const auto & r : roots) {
    ExtremalOptions eo;
    eo.region_lo = kLo;
    eo.region_hi = kHi;
    const auto ext = integrate_extremal_backward(sys, r.x_T, r.p_T, 1.0, 1e-3, eo);
    for (double H : ext.hamiltonian_trace) EXPECT_LE(std::abs(H), 1e-8);
  }
}

TEST(Extremal, DriftBeyondToleranceThrows)
{
  const auto sys = kinematic_corridor_model(CorridorConfig{});
  ExtremalOptions eo;
  eo.ham_tol = 1e-15;
  EXPECT_THROW(integrate_extremal_backward(sys, vec({3.0, 0.0}), vec({-1.0, 0.0}), 2.0, 0.3, eo), IntegrationDrift);
}

TEST(Extremal, LeavingRegionTruncates)
{
  const auto sys = kinematic_corridor_model(CorridorConfig{});
  ExtremalOptions eo;
  eo.region_lo = kLo;
  eo.region_hi = vec({4.0, 0.5});
  const auto ext = integrate_extremal_backward(sys, vec({3.0, 0.0}), vec({-1.0, 0.0}), 2.0, 1e-3, eo);
  EXPECT_TRUE(ext.truncated);
  EXPECT_LT(ext.times.front(), 2.0);
  for (const auto & x : ext.states) EXPECT_LE(x[1], 0.5);
}

TEST(Extremal, InvalidArgumentsAreConfigErrors)
{
  const auto sys = kinematic_corridor_model(CorridorConfig{});
  EXPECT_THROW(integrate_extremal_backward(sys, vec({3.0, 0.0}), vec({-1.0, 0.0}), 1.0, 0.0), ConfigError);
  EXPECT_THROW(integrate_extremal_backward(sys, vec({3.0, 0.0}), vec({-1.0, 0.0}), -1.0, 1e-3), ConfigError);
}

namespace {

DatasetConfig corridor_dataset(BoundaryMode mode, std::uint64_t seed)
{
  DatasetConfig c;
  c.count = 1000;
  c.mode = mode;
  c.box_lo = kLo;
  c.box_hi = kHi;
  c.seed = seed;
  c.pmp.search.n_starts = 16;
  return c;
}

}  // namespace

TEST(Dataset, MixCountsAreExact)
{
  const auto sys = kinematic_corridor_model(CorridorConfig{});
  for (auto mode : {BoundaryMode::Pmp, BoundaryMode::Uniform}) {
    const auto b = generate_dataset(sys, corridor_dataset(mode, 1));
    EXPECT_EQ(b.entries.size(), 1000u);
    EXPECT_EQ(b.count(SampleSource::Interior), 400u);
    EXPECT_EQ(b.count(mode == BoundaryMode::Pmp ? SampleSource::PmpBoundary : SampleSource::UniformBoundary), 600u);
  }
  EXPECT_EQ(boundary_count(7, 0.5), 3u);
  EXPECT_EQ(boundary_count(10, 0.6), 6u);
}

TEST(Dataset, SameSeedIsBitIdentical)
{
  const auto sys = kinematic_corridor_model(CorridorConfig{});
  const auto a = generate_dataset(sys, corridor_dataset(BoundaryMode::Pmp, 42));
  const auto b = generate_dataset(sys, corridor_dataset(BoundaryMode::Pmp, 42));
  const auto c = generate_dataset(sys, corridor_dataset(BoundaryMode::Pmp, 43));
  ASSERT_EQ(a.entries.size(), b.entries.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    EXPECT_EQ(a.entries[i].state, b.entries[i].state);
    EXPECT_EQ(a.entries[i].time_to_go, b.entries[i].time_to_go);
    differs = differs || a.entries[i].state != c.entries[i].state;
  }
  EXPECT_TRUE(differs);
}

TEST(Dataset, InteriorSafeAndPerturbedBoundaryStraddles)
{
  const auto sys = kinematic_corridor_model(CorridorConfig{});
  for (auto mode : {BoundaryMode::Pmp, BoundaryMode::Uniform}) {
    const auto b = generate_dataset(sys, corridor_dataset(mode, 5));
    std::size_t unsafe = 0, boundary = 0;
    for (const auto & s : b.entries) {
      EXPECT_GE(s.time_to_go, 0.0);
      EXPECT_LE(s.time_to_go, 1.0);
      if (s.source == SampleSource::Interior) {
        EXPECT_GE(sys.h(s.state), 0.0);
      } else {
        ++boundary;
        unsafe += sys.h(s.state) < 0 ? 1 : 0;
        // PMP nodes come from extremals, so they sit within noise of the boundary band or inside
        EXPECT_GE(sys.h(s.state), -0.10 - 1e-12);
      }
    }
    const double frac = static_cast<double>(unsafe) / static_cast<double>(boundary);
    EXPECT_GT(frac, 0.0);
    EXPECT_LT(frac, 1.0);
  }
}

TEST(Dataset, PmpNodesCarryIntegrationTime)
{
  const CorridorConfig cfg;
  const auto sys = kinematic_corridor_model(cfg);
  const auto arc = arc_for(cfg);
  auto c = corridor_dataset(BoundaryMode::Pmp, 9);
  c.noise = 0.0;
  const auto b = generate_dataset(sys, c);
  for (const auto & s : b.entries) {
    if (s.source != SampleSource::PmpBoundary) continue;
    const Vec ref = arc.state(s.time_to_go);
    EXPECT_LE(std::min((s.state - ref).norm(), (s.state + ref).norm()), 1e-7);
  }
}

TEST(Dataset, NoConvergedRootsRaises)
{
  const auto sys = kinematic_corridor_model(CorridorConfig{});
  auto c = corridor_dataset(BoundaryMode::Pmp, 1);
  c.pmp.search.solve.max_iterations = 1;
  c.pmp.max_retries = 2;
  EXPECT_THROW(generate_dataset(sys, c), InsufficientBoundaryPoints);
}

TEST(Dataset, BadConfigRejected)
{
  const auto sys = kinematic_corridor_model(CorridorConfig{});
  auto c = corridor_dataset(BoundaryMode::Uniform, 1);
  c.interior_fraction = 0.5;
  EXPECT_THROW(generate_dataset(sys, c), ConfigError);
  c = corridor_dataset(BoundaryMode::Uniform, 1);
  c.count = 0;
  EXPECT_THROW(generate_dataset(sys, c), ConfigError);
}
