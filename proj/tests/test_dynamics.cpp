#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <pmpsafe/corridor.hpp>
#include <pmpsafe/implicit_box.hpp>
#include <pmpsafe/params_io.hpp>
#include <pmpsafe/single_track.hpp>
#include <pmpsafe/track.hpp>

#include "test_support.hpp"

using namespace pmpsafe;
using test::vec;

namespace {

Vec vehicle_lo() { return vec({0.0, -2.5, -0.3, 5.0, -0.5, -0.1, -0.5, -2000.0, 0.0}); }
Vec vehicle_hi() { return vec({100.0, 2.5, 0.3, 20.0, 0.5, 0.1, 0.5, 2000.0, 1.0}); }

void expect_jacobians_match(const SystemModel & sys, const Vec & lo, const Vec & hi, unsigned seed)
{
  std::mt19937_64 rng(seed);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec x = test::uniform_in_box(rng, lo, hi);
    const Mat J = sys.jac_f(x);
    const Mat Jfd = test::fd_jacobian(sys.f, x);
    EXPECT_LE(test::rel_err(J, Jfd), 1e-5) << sys.name << " jac_f at trial " << trial;

    const auto dg = sys.jac_g(x);
    for (Eigen::Index k = 0; k < sys.state_dim; ++k) {
      auto gk = [&](const Vec & y) {
        const Mat G = sys.g(y);
        return Vec(Eigen::Map<const Vec>(G.data(), G.size()));
      };
      const Mat fd = test::fd_jacobian(gk, x);
      const Mat & an = dg[static_cast<std::size_t>(k)];
      const Vec an_flat = Eigen::Map<const Vec>(an.data(), an.size());
      EXPECT_LE((an_flat - fd.col(k)).norm(), 1e-5 * std::max(1.0, fd.col(k).norm())) << sys.name << " jac_g";
    }

    if (std::abs(x[sys.boundary->index]) > 1e-3) {
      EXPECT_LE(test::rel_err(sys.grad_h(x), test::fd_gradient(sys.h, x)), 1e-6);
    }
  }
}

void expect_control_affine(const SystemModel & sys, const Vec & x, const Vec & u1, const Vec & u2)
{
  const Vec mid = 0.5 * (u1 + u2);
  const Vec defect = sys.xdot(x, u1) + sys.xdot(x, u2) - 2.0 * sys.xdot(x, mid);
  EXPECT_LE(defect.cwiseAbs().maxCoeff(), 1e-9 * std::max(1.0, sys.xdot(x, u1).cwiseAbs().maxCoeff()));
}

}  // namespace

TEST(Corridor, CenterlineEquilibrium)
{
  const auto sys = kinematic_corridor_model({});
  const Vec xd = sys.xdot(vec({0.0, 0.0}), vec({0.0}));
  EXPECT_EQ(xd[0], 0.0);
  EXPECT_EQ(xd[1], 0.0);
}

TEST(Corridor, PerpendicularHeadingMovesAtFullSpeed)
{
  const auto sys = kinematic_corridor_model({});
  const Vec xd = sys.xdot(vec({0.0, std::numbers::pi / 2}), vec({0.0}));
  EXPECT_DOUBLE_EQ(xd[0], 10.0);
}

TEST(Corridor, JacobianAtExamplePoint)
{
  for (double kappa : {0.0, 1.0 / 12.0}) {
    CorridorConfig cfg;
    cfg.ref_curvature = kappa;
    const auto sys = kinematic_corridor_model(cfg);
    const Vec x = vec({0.5, 0.2});
    EXPECT_LE(test::rel_err(sys.jac_f(x), test::fd_jacobian(sys.f, x)), 1e-5);
  }
}

TEST(Corridor, RandomJacobiansStraightAndTurn)
{
  TrackGeometry track;
  expect_jacobians_match(kinematic_corridor_model(10.0, 1.0 / 12.0, track), vec({-3.5, -1.2}), vec({3.5, 1.2}), 1);
  expect_jacobians_match(kinematic_corridor_model(10.0, 0.15, track, true), vec({-3.5, -1.2}), vec({3.5, 1.2}), 2);
}

TEST(Corridor, SingularDenominatorOnTurn)
{
  CorridorConfig cfg;
  cfg.ref_curvature = 1.0 / 12.0;
  const auto sys = kinematic_corridor_model(cfg);
  EXPECT_THROW(sys.f(vec({12.0, 0.0})), DomainError);
  EXPECT_THROW(sys.jac_f(vec({13.0, 0.0})), DomainError);
  EXPECT_NO_THROW(sys.f(vec({11.9, 0.0})));
}

TEST(Corridor, RejectsBadConfig)
{
  CorridorConfig cfg;
  cfg.speed = 0.0;
  EXPECT_THROW(kinematic_corridor_model(cfg), ConfigError);
  cfg = {};
  cfg.curvature_bound = -1.0;
  EXPECT_THROW(kinematic_corridor_model(cfg), ConfigError);
}

TEST(Corridor, ControlAffineAndDeterministic)
{
  const auto sys = kinematic_corridor_model({});
  const Vec x = vec({1.3, -0.4});
  expect_control_affine(sys, x, vec({0.05}), vec({-0.08}));
  const Vec a = sys.f(x), b = sys.f(x);
  EXPECT_EQ(a, b);
}

TEST(SingleTrack, StraightCruiseIsEquilibriumForPathErrors)
{
  TrackGeometry track;
  const auto sys = single_track_model({}, {}, track);
  Vec x = Vec::Zero(9);
  x[st::S] = 10.0;  // on the first straight
  x[st::V] = 12.0;
  const Vec xd = sys.f(x);
  EXPECT_EQ(xd[st::E], 0.0);
  EXPECT_EQ(xd[st::DPHI], 0.0);
  EXPECT_EQ(xd[st::V], 0.0);
  EXPECT_EQ(xd[st::GAMMA], 0.0);
}

TEST(SingleTrack, InputMatrixSelectsRates)
{
  TrackGeometry track;
  const auto sys = single_track_model({}, {}, track);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 10; ++i) {
    const Vec x = test::uniform_in_box(rng, vehicle_lo(), vehicle_hi());
    const Vec gu = sys.g(x) * vec({0.3, -700.0});
    Vec expected = Vec::Zero(9);
    expected[st::DELTA] = 0.3;
    expected[st::TAU] = -700.0;
    EXPECT_EQ(gu, expected);
  }
}

TEST(SingleTrack, NoForcesNoAcceleration)
{
  // zero slip (beta = r = delta = 0) gives zero lateral force, tau = 0 gives zero longitudinal force
  TrackGeometry track;
  const auto sys = single_track_model({}, {}, track);
  Vec x = Vec::Zero(9);
  x[st::S] = 35.0;  // inside the first turn
  x[st::E] = 1.0;
  x[st::DPHI] = 0.2;
  x[st::V] = 8.0;
  EXPECT_EQ(sys.f(x)[st::V], 0.0);
}

TEST(SingleTrack, DomainErrors)
{
  TrackGeometry track;
  const auto sys = single_track_model({}, {}, track);
  Vec x = Vec::Zero(9);
  x[st::S] = 10.0;
  x[st::V] = 1.0;  // v_min default
  EXPECT_THROW(sys.f(x), DomainError);
  x[st::V] = 10.0;
  x[st::S] = 35.0;
  x[st::E] = 12.0;
  EXPECT_THROW(sys.f(x), DomainError);
  VehicleParams bad;
  bad.mass = -1;
  EXPECT_THROW(single_track_model(bad, {}, track), ConfigError);
}

TEST(SingleTrack, RandomJacobians)
{
  TrackGeometry track;
  expect_jacobians_match(single_track_model({}, {}, track), vehicle_lo(), vehicle_hi(), 4);
  expect_jacobians_match(vehicle_model({}, {}, track), vehicle_lo(), vehicle_hi(), 5);
}

TEST(SingleTrack, ControlAffine)
{
  TrackGeometry track;
  const auto sys = vehicle_model({}, {}, track);
  std::mt19937_64 rng(6);
  const Vec x = test::uniform_in_box(rng, vehicle_lo(), vehicle_hi());
  expect_control_affine(sys, x, vec({0.4, 1000.0}), vec({-0.9, -4000.0}));
}

TEST(Tire, OddBoundedMonotone)
{
  TireModel tire = with_static_loads({}, VehicleParams{});
  const double fz = tire.normal_load_front;
  const double fymax = derated_max_lateral_force(tire.mu, fz, 2000.0, tire.zeta);
  EXPECT_NEAR(fymax, std::sqrt(std::pow(tire.mu * fz, 2) - tire.zeta * 2000.0 * 2000.0), 1e-9);
  double prev = brush_lateral_force(-0.6, tire.cornering_stiffness_front, fymax);
  for (int i = -599; i <= 600; ++i) {
    const double a = i * 1e-3;
    const double fy = brush_lateral_force(a, tire.cornering_stiffness_front, fymax);
    EXPECT_DOUBLE_EQ(fy, -brush_lateral_force(-a, tire.cornering_stiffness_front, fymax));
    EXPECT_LE(std::abs(fy), fymax * (1 + 1e-12));
    EXPECT_LE(fy, prev + 1e-9);  // non-increasing in slip angle
    prev = fy;
  }
}

TEST(Tire, LongitudinalForceBeyondFriction)
{
  EXPECT_THROW(derated_max_lateral_force(0.9, 10000.0, 9000.0 / std::sqrt(0.99) + 1.0, 0.99), DomainError);
}

TEST(ImplicitBox, InteriorCommandPassesThroughAsSmoothingVanishes)
{
  Vec rate = vec({1.0}), pos = vec({0.7});
  double prev_err = 1e9;
  for (double w : {0.1, 0.02, 0.005, 0.001}) {
    const auto sys = extend_with_implicit_box(
        [] {
          SystemModel s;
          s.name = "integrator";
          s.state_dim = 1;
          s.control_dim = 1;
          s.f = [](const Vec &) { return Vec(Vec::Zero(1)); };
          s.g = [](const Vec &) { return Mat(Mat::Ones(1, 1)); };
          s.jac_f = [](const Vec &) { return Mat(Mat::Zero(1, 1)); };
          s.jac_g = [](const Vec &) { return std::vector<Mat>(1, Mat::Zero(1, 1)); };
          s.control_set = ControlSet::box(vec({1.0}));
          s.h = [](const Vec &) { return 1.0; };
          s.grad_h = [](const Vec &) { return Vec(Vec::Zero(1)); };
          return s;
        }(),
        {0}, rate, pos, vec({w}));
    const double err = std::abs(sys.xdot(vec({0.6}), vec({0.5}))[0] - 0.5);
    EXPECT_LE(err, prev_err);
    prev_err = err;
  }
  EXPECT_LT(prev_err, 1e-12);
}

TEST(ImplicitBox, CaseValuesAtTheBounds)
{
  TrackGeometry track;
  VehicleParams p;
  const auto sys = vehicle_model(p, {}, track);
  Vec x = Vec::Zero(9);
  x[st::S] = 5.0;
  x[st::V] = 10.0;
  x[st::DELTA] = p.steer_max;
  x[st::TAU] = -p.torque_max;
  // upper bound with full positive rate command parks the state
  EXPECT_NEAR(sys.xdot(x, vec({p.steer_rate_max, 0.0}))[st::DELTA], 0.0, 1e-12);
  // lower bound: (rate + cmd) / 2
  EXPECT_NEAR(sys.xdot(x, vec({0.0, 0.0}))[st::TAU], p.torque_rate_max / 2.0, 1e-9);
  EXPECT_NEAR(sys.xdot(x, vec({0.0, -p.torque_rate_max}))[st::TAU], 0.0, 1e-9);
  EXPECT_NEAR(sys.g(x)(st::DELTA, 0), 0.5, 1e-12);
}

TEST(ImplicitBox, SaturatingRolloutStaysInsideBound)
{
  SystemModel s;
  s.name = "integrator";
  s.state_dim = 1;
  s.control_dim = 1;
  s.f = [](const Vec &) { return Vec(Vec::Zero(1)); };
  s.g = [](const Vec &) { return Mat(Mat::Ones(1, 1)); };
  s.jac_f = [](const Vec &) { return Mat(Mat::Zero(1, 1)); };
  s.jac_g = [](const Vec &) { return std::vector<Mat>(1, Mat::Zero(1, 1)); };
  s.control_set = ControlSet::box(vec({2.0}));
  s.h = [](const Vec &) { return 1.0; };
  s.grad_h = [](const Vec &) { return Vec(Vec::Zero(1)); };
  const double ubar = 0.71;
  const auto sys = extend_with_implicit_box(s, {0}, vec({2.0}), vec({ubar}));
  Vec x = vec({0.0});
  double worst = 0;
  for (int k = 0; k < 20000; ++k) {
    const double cmd = ((k / 2000) % 2 == 0) ? 2.0 : -2.0;  // 10 s saturating blocks, dt = 5 ms
    x = rk4_step(sys, x, vec({cmd}), 5e-3);
    worst = std::max(worst, std::abs(x[0]));
  }
  EXPECT_LE(worst, ubar * (1 + 1e-3));
  EXPECT_GT(worst, ubar * 0.99);
}

TEST(Track, CurvatureAndLength)
{
  TrackGeometry track(20.0, 12.0, 3.0);
  EXPECT_DOUBLE_EQ(track.total_length(), 40.0 + 24.0 * std::numbers::pi);
  EXPECT_EQ(track.kappa_ref(10.0), 0.0);
  EXPECT_DOUBLE_EQ(track.kappa_ref(25.0), 1.0 / 12.0);
  EXPECT_EQ(track.kappa_ref(20.0 + 12.0 * std::numbers::pi + 1.0), 0.0);
  EXPECT_DOUBLE_EQ(track.kappa_ref(track.total_length() - 1.0), 1.0 / 12.0);
  EXPECT_EQ(track.kappa_ref(10.0 + track.total_length()), track.kappa_ref(10.0));
  EXPECT_THROW(TrackGeometry(20.0, -1.0, 3.0), ConfigError);
}

TEST(Track, FrenetExamples)
{
  TrackGeometry track;
  const auto p0 = track.frenet_to_global(0.0, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(p0.X, 0.0);
  EXPECT_DOUBLE_EQ(p0.Y, 0.0);
  EXPECT_DOUBLE_EQ(p0.psi, 0.0);
  const auto p1 = track.frenet_to_global(0.0, 3.0, 0.0);
  EXPECT_NEAR(p1.X, 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(p1.Y, 3.0);
}

TEST(Track, RoundTrip)
{
  TrackGeometry track;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> s(0.0, track.total_length()), e(-3.0, 3.0), h(-1.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double s0 = s(rng), e0 = e(rng), h0 = h(rng);
    const auto g = track.frenet_to_global(s0, e0, h0);
    const auto f = track.global_to_frenet(g.X, g.Y, g.psi);
    const auto g2 = track.frenet_to_global(f.s, f.e, f.heading_err);
    EXPECT_LE(std::hypot(g2.X - g.X, g2.Y - g.Y), 1e-9);
    EXPECT_NEAR(f.e, e0, 1e-9);
    EXPECT_NEAR(TrackGeometry::wrap_angle(f.heading_err - h0), 0.0, 1e-9);
  }
}

TEST(Params, JsonRoundTripAndVersion)
{
  VehicleConfig cfg;
  cfg.vehicle.mass = 1800.0;
  cfg.track = TrackGeometry(25.0, 10.0, 2.5);
  const auto back = vehicle_config_from_json(to_json(cfg));
  EXPECT_EQ(back.vehicle.mass, 1800.0);
  EXPECT_EQ(back.track.turn_radius(), 10.0);
  auto j = to_json(cfg);
  j["schema_version"] = 99;
  EXPECT_THROW(vehicle_config_from_json(j), VersionError);
}
