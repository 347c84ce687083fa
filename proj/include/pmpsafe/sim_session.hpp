#pragma once

/**
 * @file
 * @brief Fixed-tick shared-control session: plant, filter, telemetry, logs and replay.
 *
 * A Session owns one plant and an optional read-only value source. Each tick it
 * takes the freshest driver command from a latest-wins mailbox, shapes it into
 * the plant's input, filters it, integrates one tick and emits a state message.
 * The tick can be driven synchronously through tick() or by the real-time loop
 * started with start().
 *
 * Logs are JSON lines. The first line is a header carrying schema_version, the
 * plant description and the initial state; every tick appends the request, both
 * inputs and the resulting state. Doubles are written in shortest round-trip
 * form so a replay with the filter disabled reproduces the record exactly.
 */

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <fstream>
#include <functional>
#include <istream>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "corridor.hpp"
#include "errors.hpp"
#include "hj_grid.hpp"
#include "implicit_box.hpp"
#include "params_io.hpp"
#include "safety_filter.hpp"
#include "value_source.hpp"

namespace pmpsafe {

inline constexpr int kLogSchemaVersion = 1;

/// Driver intent: a steering request (rad, or 1/m for the corridor) and a torque request (Nm).
struct Command
{
  double steer{0};
  double torque{0};
  std::int64_t seq{-1};
};

inline nlohmann::json vec_to_json(const Vec & v)
{
  auto a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Vec vec_from_json(const nlohmann::json & j)
{
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

// ------------------------------------------------------------------------------------------------
// plants

/// Telemetry fields common to every plant.
struct PlantReadout
{
  double s{0}, e{0}, dphi{0}, speed{0}, r{0}, beta{0}, delta{0}, tau{0};
  double X{0}, Y{0}, psi{0};
};

class Plant
{
public:
  virtual ~Plant() = default;
  virtual const SystemModel & model() const = 0;
  virtual const Vec & state() const = 0;
  virtual void set_state(const Vec & x) = 0;
  virtual Vec initial_state() const = 0;
  /// map a driver request to the model input
  virtual Vec desired_input(const Command & c) const = 0;
  /// zero torque and steering back toward the centerline
  virtual Vec safe_stop_input() const = 0;
  /// integrate one tick with `substeps` RK4 steps; leaves the state untouched on DomainError
  virtual void advance(const Vec & u, double dt, int substeps) = 0;
  virtual PlantReadout readout() const = 0;
  /// enough to rebuild the plant with make_plant()
  virtual nlohmann::json describe() const = 0;
};

namespace detail {

inline Vec integrate(const SystemModel & sys, Vec x, const Vec & u, double dt, int substeps)
{
  const double h = dt / substeps;
  for (int k = 0; k < substeps; ++k) x = rk4_step(sys, x, u, h);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) throw DomainError("plant: non-finite state after integration");
  }
  return x;
}

}  // namespace detail

/**
 * Kinematic corridor on a single segment of constant reference curvature.
 * The model state is (e, dphi); path progress and the heading are carried
 * alongside and integrated with the same RK4 steps. The steering request is a
 * path curvature in 1/m and the torque request is ignored.
 */
class CorridorPlant : public Plant
{
public:
  struct Config
  {
    CorridorConfig corridor;
    double e0{0.0};
    double dphi0{0.0};
    /// centering gains used by safe-stop
    double k_e{0.05};
    double k_phi{0.4};
  };

  explicit CorridorPlant(Config cfg) : cfg_(cfg), sys_(kinematic_corridor_model(cfg.corridor))
  {
    x_ = initial_state();
  }

  const SystemModel & model() const override { return sys_; }
  const Vec & state() const override { return x_; }
  Vec initial_state() const override
  {
    Vec x(3);
    x << cfg_.e0, cfg_.dphi0, 0.0;
    return x;
  }
  void set_state(const Vec & x) override
  {
    if (x.size() != 3) throw ConfigError("corridor plant: state is (e, dphi, s)");
    x_ = x;
  }

  Vec desired_input(const Command & c) const override
  {
    const double ub = cfg_.corridor.curvature_bound;
    Vec u(1);
    u[0] = std::clamp(c.steer, -ub, ub);
    return u;
  }

  Vec safe_stop_input() const override
  {
    const double k = cfg_.corridor.ref_curvature;
    const double ub = cfg_.corridor.curvature_bound;
    Vec u(1);
    u[0] = std::clamp(k - cfg_.k_e * x_[0] - cfg_.k_phi * x_[1], -ub, ub);
    return u;
  }

  void advance(const Vec & u, double dt, int substeps) override
  {
    // augmented system (e, dphi, s); the heading follows from s and dphi
    const double V = cfg_.corridor.speed, k = cfg_.corridor.ref_curvature;
    auto rhs = [&](const Vec & z) {
      Vec d(3);
      const Vec f = sys_.f(z.head(2));
      d[0] = f[0];
      d[1] = f[1] + V * u[0];
      d[2] = V * std::cos(z[1]) / (1.0 - k * z[0]);
      return d;
    };
    Vec z = x_;
    const double h = dt / substeps;
    for (int i = 0; i < substeps; ++i) {
      const Vec k1 = rhs(z), k2 = rhs(z + 0.5 * h * k1), k3 = rhs(z + 0.5 * h * k2), k4 = rhs(z + h * k3);
      z += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!z.allFinite()) throw DomainError("corridor plant: non-finite state after integration");
    x_ = z;
  }

  PlantReadout readout() const override
  {
    const double k = cfg_.corridor.ref_curvature;
    const double s = x_[2];
    PlantReadout r;
    r.s = s;
    r.e = x_[0];
    r.dphi = x_[1];
    r.speed = cfg_.corridor.speed;
    const double theta = k * s;
    double cx = s, cy = 0.0;
    if (k != 0.0) {
      cx = std::sin(theta) / k;
      cy = (1.0 - std::cos(theta)) / k;
    }
    r.X = cx - r.e * std::sin(theta);
    r.Y = cy + r.e * std::cos(theta);
    r.psi = theta + r.dphi;
    return r;
  }

  nlohmann::json describe() const override
  {
    const auto & c = cfg_.corridor;
    return {{"kind", "corridor"},
            {"speed", c.speed},
            {"curvature_bound", c.curvature_bound},
            {"ref_curvature", c.ref_curvature},
            {"half_width", c.half_width},
            {"e0", cfg_.e0},
            {"dphi0", cfg_.dphi0},
            {"k_e", cfg_.k_e},
            {"k_phi", cfg_.k_phi}};
  }

  const Config & config() const { return cfg_; }

private:
  Config cfg_;
  SystemModel sys_;
  Vec x_;
};

/**
 * Nine-state single-track vehicle with implicit steering and torque limits.
 * Driver requests are positions; the model inputs are rates, so the request is
 * shaped as u_d = K (request - [delta, tau]) and saturated to the rate box.
 */
class VehiclePlant : public Plant
{
public:
  struct Config
  {
    VehicleConfig vehicle;
    double v0{8.0};
    double s0{0.0};
    double gamma0{0.1};
    double k_steer{5.0};
    double k_torque{5.0};
    /// safe-stop steering law: delta = L kappa_ref - k_e e - k_phi dphi
    double k_e{0.05};
    double k_phi{0.5};
  };

  explicit VehiclePlant(Config cfg)
      : cfg_(std::move(cfg)),
        sys_(vehicle_model(cfg_.vehicle.vehicle, cfg_.vehicle.tire, cfg_.vehicle.track, cfg_.vehicle.track.half_width()))
  {
    if (!(cfg_.k_steer > 0) || !(cfg_.k_torque > 0)) throw ConfigError("vehicle plant: shaping gains must be positive");
    x_ = initial_state();
  }

  const SystemModel & model() const override { return sys_; }
  const Vec & state() const override { return x_; }
  Vec initial_state() const override
  {
    Vec x = Vec::Zero(st::N);
    x[st::S] = cfg_.s0;
    x[st::V] = cfg_.v0;
    x[st::GAMMA] = cfg_.gamma0;
    return x;
  }
  void set_state(const Vec & x) override
  {
    if (x.size() != st::N) throw ConfigError("vehicle plant: state must have nine entries");
    x_ = x;
  }

  Vec desired_input(const Command & c) const override
  {
    const auto & p = cfg_.vehicle.vehicle;
    Vec u(2);
    u[0] = std::clamp(cfg_.k_steer * (c.steer - x_[st::DELTA]), -p.steer_rate_max, p.steer_rate_max);
    u[1] = std::clamp(cfg_.k_torque * (c.torque - x_[st::TAU]), -p.torque_rate_max, p.torque_rate_max);
    return u;
  }

  Vec safe_stop_input() const override
  {
    const auto & p = cfg_.vehicle.vehicle;
    const double kappa = cfg_.vehicle.track.kappa_ref(x_[st::S]);
    Command c;
    c.steer = std::clamp((p.a + p.b) * kappa - cfg_.k_e * x_[st::E] - cfg_.k_phi * x_[st::DPHI], -p.steer_max,
                         p.steer_max);
    c.torque = 0.0;
    return desired_input(c);
  }

  void advance(const Vec & u, double dt, int substeps) override { x_ = detail::integrate(sys_, x_, u, dt, substeps); }

  PlantReadout readout() const override
  {
    const auto & tr = cfg_.vehicle.track;
    PlantReadout r;
    r.s = tr.wrap(x_[st::S]);
    r.e = x_[st::E];
    r.dphi = x_[st::DPHI];
    r.speed = x_[st::V];
    r.r = x_[st::R];
    r.beta = x_[st::BETA];
    r.delta = x_[st::DELTA];
    r.tau = x_[st::TAU];
    const auto g = tr.frenet_to_global(x_[st::S], x_[st::E], x_[st::DPHI]);
    r.X = g.X;
    r.Y = g.Y;
    r.psi = g.psi;
    return r;
  }

  nlohmann::json describe() const override
  {
    return {{"kind", "vehicle"},       {"params", to_json(cfg_.vehicle)}, {"v0", cfg_.v0},
            {"s0", cfg_.s0},           {"gamma0", cfg_.gamma0},           {"k_steer", cfg_.k_steer},
            {"k_torque", cfg_.k_torque}, {"k_e", cfg_.k_e},              {"k_phi", cfg_.k_phi}};
  }

  const Config & config() const { return cfg_; }

private:
  Config cfg_;
  SystemModel sys_;
  Vec x_;
};

inline std::unique_ptr<Plant> make_plant(const nlohmann::json & d)
{
  try {
    const auto kind = d.at("kind").get<std::string>();
    if (kind == "corridor") {
      CorridorPlant::Config c;
      c.corridor.speed = d.at("speed").get<double>();
      c.corridor.curvature_bound = d.at("curvature_bound").get<double>();
      c.corridor.ref_curvature = d.at("ref_curvature").get<double>();
      c.corridor.half_width = d.at("half_width").get<double>();
      c.e0 = d.value("e0", 0.0);
      c.dphi0 = d.value("dphi0", 0.0);
      c.k_e = d.value("k_e", c.k_e);
      c.k_phi = d.value("k_phi", c.k_phi);
      return std::make_unique<CorridorPlant>(c);
    }
    if (kind == "vehicle") {
      VehiclePlant::Config c;
      c.vehicle = vehicle_config_from_json(d.at("params"));
      c.v0 = d.value("v0", c.v0);
      c.s0 = d.value("s0", c.s0);
      c.gamma0 = d.value("gamma0", c.gamma0);
      c.k_steer = d.value("k_steer", c.k_steer);
      c.k_torque = d.value("k_torque", c.k_torque);
      c.k_e = d.value("k_e", c.k_e);
      c.k_phi = d.value("k_phi", c.k_phi);
      return std::make_unique<VehiclePlant>(c);
    }
    throw ConfigError("plant: unknown kind '" + kind + "'");
  } catch (const nlohmann::json::exception & ex) {
    throw ConfigError(std::string("plant description: ") + ex.what());
  }
}

/// Which part of the plant state the value source and the filter see.
inline Vec filter_state(const Plant & p)
{
  return p.state().head(p.model().state_dim);
}

// ------------------------------------------------------------------------------------------------
// built-in vehicle envelope

/**
 * Hand-built speed envelope for the vehicle plant, usable as a value source.
 *
 *   B(x) = (v_allow(s)^2 - v_pred^2) / (2 a_dec),   v_pred = V + t_p tau / (r_w m)
 *
 * v_allow is v_turn on the turns and rises as sqrt(v_turn^2 + 2 a_dec d) with the
 * distance d to the next turn entry on the straights. The torque term gives B a
 * direct dependence on the torque rate, so the filter can act on it. This is
 * not a reachability value; it keeps the speed low enough for a tracking driver.
 */
struct SpeedEnvelopeConfig
{
  double v_turn{8.0};
  double decel{4.0};
  double preview{0.6};
};

inline ValueSource vehicle_speed_envelope(const VehicleConfig & vc, SpeedEnvelopeConfig ec = {})
{
  if (!(ec.v_turn > 0) || !(ec.decel > 0) || !(ec.preview >= 0)) throw ConfigError("speed envelope: bad parameters");
  const auto tr = vc.track;
  const double L = tr.straight_length(), arc = std::numbers::pi * tr.turn_radius();
  const double c_tau = ec.preview / (vc.vehicle.wheel_radius * vc.vehicle.mass);
  auto fn = [tr, L, arc, c_tau, ec](const Vec & x, double) {
    const double s = tr.wrap(x[st::S]);
    // distance to the next turn entry, or -1 on a turn
    double d = -1.0;
    if (s < L) d = L - s;
    else if (s >= L + arc && s < 2.0 * L + arc) d = 2.0 * L + arc - s;
    const double va2 = ec.v_turn * ec.v_turn + (d >= 0 ? 2.0 * ec.decel * d : 0.0);
    const double dva2_ds = d >= 0 ? -2.0 * ec.decel : 0.0;
    const double vp = x[st::V] + c_tau * x[st::TAU];
    ValueAndGradients out;
    out.value = (va2 - vp * vp) / (2.0 * ec.decel);
    out.grad_x = Vec::Zero(x.size());
    out.grad_x[st::S] = dva2_ds / (2.0 * ec.decel);
    out.grad_x[st::V] = -vp / ec.decel;
    out.grad_x[st::TAU] = -vp * c_tau / ec.decel;
    out.dV_dtau = 0.0;
    return out;
  };
  Vec lo = Vec::Constant(st::N, -1e300), hi = Vec::Constant(st::N, 1e300);
  return {"speed_envelope", fn, lo, hi, 0.0};
}

// ------------------------------------------------------------------------------------------------
// telemetry

/// Bounded queue of serialized messages; drops the oldest entry when full.
class TelemetryQueue
{
public:
  explicit TelemetryQueue(std::size_t capacity) : capacity_(std::max<std::size_t>(capacity, 1)) {}

  void push(std::string msg)
  {
    {
      std::lock_guard lk(m_);
      if (q_.size() >= capacity_) {
        q_.pop_front();
        ++dropped_;
      }
      q_.push_back(std::move(msg));
    }
    cv_.notify_one();
  }

  std::optional<std::string> pop(std::chrono::milliseconds wait = std::chrono::milliseconds(0))
  {
    std::unique_lock lk(m_);
    if (wait.count() > 0) cv_.wait_for(lk, wait, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return std::nullopt;
    auto s = std::move(q_.front());
    q_.pop_front();
    return s;
  }

  void close()
  {
    {
      std::lock_guard lk(m_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  std::size_t dropped() const
  {
    std::lock_guard lk(m_);
    return dropped_;
  }

  std::size_t size() const
  {
    std::lock_guard lk(m_);
    return q_.size();
  }

private:
  mutable std::mutex m_;
  std::condition_variable cv_;
  std::deque<std::string> q_;
  std::size_t capacity_;
  std::size_t dropped_{0};
  bool closed_{false};
};

/// Two-axis zero level set of a value source, other coordinates fixed at `base`.
inline LevelSet sampled_level_set(const ValueSource & src, Vec base, Eigen::Index ax0, Eigen::Index ax1, double tau,
                                  std::size_t n = 101)
{
  GridValueFunction vf;
  vf.axes = {{src.lo()[ax0], src.hi()[ax0], n}, {src.lo()[ax1], src.hi()[ax1], n}};
  vf.taus = {0.0};
  vf.slices.assign(1, std::vector<double>(n * n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      base[ax0] = vf.axes[0].coord(i);
      base[ax1] = vf.axes[1].coord(j);
      vf.slices[0][i * n + j] = src.eval(base, tau).value;
    }
  }
  return zero_level_set(vf, 0.0);
}

inline nlohmann::json level_set_message(const LevelSet & ls, double tau, const std::vector<std::string> & axes)
{
  auto comps = nlohmann::json::array();
  for (const auto & c : ls.components) {
    auto pts = nlohmann::json::array();
    for (const auto & p : c) pts.push_back(vec_to_json(p));
    comps.push_back(std::move(pts));
  }
  return {{"type", "level_set"}, {"tau", tau}, {"axes", axes}, {"components", std::move(comps)}};
}

// ------------------------------------------------------------------------------------------------
// session

enum class IdlePolicy { HoldLast, Zero };

struct SessionConfig
{
  double tick_rate{50.0};
  int substeps{4};
  bool filter_enabled{true};
  FilterConfig filter;
  IdlePolicy idle{IdlePolicy::HoldLast};
  /// seconds of simulated time without a command before the idle policy applies
  double idle_timeout{0.5};
  std::size_t telemetry_capacity{256};
  /// in-memory log lines kept besides the header; older ticks are dropped
  std::size_t log_capacity{1'000'000};
  /// optional complete log file
  std::string log_path;
  std::string id{"session"};

  void validate() const
  {
    if (!(tick_rate > 0) || tick_rate > 200.0) throw ConfigError("session: tick rate must lie in (0, 200] Hz");
    if (substeps < 1) throw ConfigError("session: at least one integration substep");
    if (!(idle_timeout >= 0)) throw ConfigError("session: idle timeout must be non-negative");
  }
};

struct SessionStats
{
  std::uint64_t ticks{0};
  std::uint64_t missed_ticks{0};
  std::uint64_t violations{0};
  std::uint64_t interventions{0};
  std::uint64_t infeasible{0};
  std::uint64_t rejected_commands{0};
  bool safe_stop{false};
  std::vector<double> tick_compute_times;
};

class Session
{
public:
  Session(std::unique_ptr<Plant> plant, std::optional<ValueSource> source, SessionConfig cfg = {})
      : plant_(std::move(plant)), source_(std::move(source)), cfg_(std::move(cfg))
  {
    cfg_.validate();
    if (!plant_) throw ConfigError("session: null plant");
    if (cfg_.filter_enabled && !source_) throw ConfigError("session: filter enabled without a value source");
    filter_enabled_ = cfg_.filter_enabled;
    if (!cfg_.log_path.empty()) {
      log_file_.open(cfg_.log_path);
      if (!log_file_) throw ConfigError("session: cannot open log file " + cfg_.log_path);
    }
    header_ = {{"type", "header"},
               {"schema_version", kLogSchemaVersion},
               {"session", cfg_.id},
               {"plant", plant_->describe()},
               {"tick_rate", cfg_.tick_rate},
               {"substeps", cfg_.substeps},
               {"filter_enabled", filter_enabled_},
               {"gamma", cfg_.filter.gamma},
               {"filter_tau", cfg_.filter.tau},
               {"time_term", cfg_.filter.time_term},
               {"value_source", source_ ? source_->kind() : std::string("none")},
               {"initial_state", vec_to_json(plant_->state())}};
    write_line(header_.dump(), true);
  }

  ~Session() { stop(); }

  Session(const Session &) = delete;
  Session & operator=(const Session &) = delete;

  double period() const { return 1.0 / cfg_.tick_rate; }
  const SessionConfig & config() const { return cfg_; }

  /// Latest-wins mailbox. Commands must carry strictly increasing seq numbers.
  bool submit(const Command & c)
  {
    std::lock_guard lk(mail_m_);
    if (c.seq <= last_seq_ || !std::isfinite(c.steer) || !std::isfinite(c.torque)) {
      ++rejected_;
      return false;
    }
    last_seq_ = c.seq;
    pending_ = c;
    return true;
  }

  void request_reset()
  {
    std::lock_guard lk(mail_m_);
    reset_pending_ = true;
  }

  void set_filter_enabled(bool on)
  {
    if (on && !source_) throw ConfigError("session: no value source to filter with");
    std::lock_guard lk(mail_m_);
    toggle_pending_ = on;
  }

  /// Handle one client message. Returns an error message to send back, if any.
  std::optional<nlohmann::json> handle_message(const std::string & text)
  {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
      const auto type = j.at("type").get<std::string>();
      if (type == "command") {
        Command c{j.at("steer").get<double>(), j.at("torque").get<double>(), j.at("seq").get<std::int64_t>()};
        if (!submit(c)) return error_message("command rejected: stale seq or non-finite value");
        return std::nullopt;
      }
      if (type == "reset") {
        request_reset();
        return std::nullopt;
      }
      if (type == "toggle_filter") {
        set_filter_enabled(j.at("enabled").get<bool>());
        return std::nullopt;
      }
      return error_message("unknown message type '" + type + "'");
    } catch (const nlohmann::json::exception & ex) {
      return error_message(std::string("malformed message: ") + ex.what());
    } catch (const ConfigError & ex) {
      return error_message(ex.what());
    }
  }

  /// Register a telemetry consumer. State and event messages are pushed as serialized JSON.
  std::shared_ptr<TelemetryQueue> subscribe(std::size_t capacity = 0)
  {
    auto q = std::make_shared<TelemetryQueue>(capacity ? capacity : cfg_.telemetry_capacity);
    std::lock_guard lk(sub_m_);
    subscribers_.push_back(q);
    return q;
  }

  /// Level-set message for clients, if the source supports a two-axis view.
  std::optional<nlohmann::json> level_set(const std::shared_ptr<const GridValueFunction> & grid = nullptr) const
  {
    if (grid && grid->dims() == 2) return level_set_message(zero_level_set(*grid, grid->horizon()), grid->horizon(),
                                                            model_axes(2));
    if (!source_ || source_->state_dim() != 2) return std::nullopt;
    return level_set_message(sampled_level_set(*source_, Vec::Zero(2), 0, 1, source_->horizon()), source_->horizon(),
                             model_axes(2));
  }

  /// One simulation step. Returns the state message that was broadcast.
  nlohmann::json tick()
  {
    const auto t0 = std::chrono::steady_clock::now();
    std::lock_guard lk(sim_m_);

    Command cmd;
    bool fresh = false, do_reset = false;
    std::optional<bool> toggle;
    {
      std::lock_guard ml(mail_m_);
      if (pending_) {
        cmd = *pending_;
        pending_.reset();
        fresh = true;
      }
      do_reset = reset_pending_;
      reset_pending_ = false;
      toggle = toggle_pending_;
      toggle_pending_.reset();
    }

    if (do_reset) {
      plant_->set_state(plant_->initial_state());
      safe_stop_ = false;
      last_cmd_ = Command{};
      last_cmd_time_ = t_;
      emit_event({{"type", "reset"}, {"k", k_}, {"x", vec_to_json(plant_->state())}});
    }
    if (toggle && *toggle != filter_enabled_) {
      filter_enabled_ = *toggle;
      emit_event({{"type", "toggle_filter"}, {"k", k_}, {"enabled", filter_enabled_}});
    }

    if (fresh) {
      last_cmd_ = cmd;
      last_cmd_time_ = t_;
    } else if (cfg_.idle == IdlePolicy::Zero && t_ - last_cmd_time_ >= cfg_.idle_timeout) {
      last_cmd_.steer = 0.0;
      last_cmd_.torque = 0.0;
    }
    const Command effective = last_cmd_;

    const Vec xf = filter_state(*plant_);
    const Vec u_d = plant_->desired_input(effective);
    Vec u = u_d;
    bool intervened = false;
    double value = std::numeric_limits<double>::quiet_NaN();
    if (!safe_stop_ && source_) {
      try {
        if (filter_enabled_) {
          const auto fr = filter_step(*source_, plant_->model(), xf, u_d, cfg_.filter);
          u = fr.u_out;
          intervened = fr.intervened;
          value = fr.value;
          if (fr.status == FilterStatus::Infeasible) ++infeasible_;
        } else {
          value = source_->eval(xf, cfg_.filter.tau < 0 ? source_->horizon() : cfg_.filter.tau).value;
        }
      } catch (const ExtrapolationError & ex) {
        enter_safe_stop(std::string("value source: ") + ex.what());
      }
    }
    if (safe_stop_) {
      u = plant_->safe_stop_input();
      intervened = (u - u_d).norm() > cfg_.filter.intervention_tol;
    }
    if (intervened) ++interventions_;

    try {
      plant_->advance(u, period(), cfg_.substeps);
    } catch (const DomainError & ex) {
      enter_safe_stop(std::string("model: ") + ex.what());
    }
    ++k_;
    t_ = static_cast<double>(k_) * period();

    const double h = plant_->model().h(filter_state(*plant_));
    const bool violation = h < 0;
    if (violation) {
      ++violations_;
      emit_event({{"type", "violation"}, {"k", k_}, {"t", t_}, {"h", h}});
    }

    nlohmann::json rec = {{"type", "tick"},
                          {"k", k_},
                          {"t", t_},
                          {"seq", effective.seq},
                          {"request", {effective.steer, effective.torque}},
                          {"filter_enabled", filter_enabled_},
                          {"safe_stop", safe_stop_},
                          {"u_d", vec_to_json(u_d)},
                          {"u_out", vec_to_json(u)},
                          {"intervened", intervened},
                          {"x", vec_to_json(plant_->state())}};
    write_line(rec.dump(), false);

    const auto r = plant_->readout();
    nlohmann::json msg = {{"type", "state"},
                          {"t", t_},
                          {"s", r.s},
                          {"e", r.e},
                          {"dphi", r.dphi},
                          {"V_speed", r.speed},
                          {"r", r.r},
                          {"beta", r.beta},
                          {"delta", r.delta},
                          {"tau", r.tau},
                          {"X", r.X},
                          {"Y", r.Y},
                          {"psi", r.psi},
                          {"value", std::isfinite(value) ? nlohmann::json(value) : nlohmann::json(nullptr)},
                          {"u_d", vec_to_json(u_d)},
                          {"u_out", vec_to_json(u)},
                          {"intervened", intervened},
                          {"missed_ticks", missed_.load()},
                          {"seq", effective.seq},
                          {"filter_enabled", filter_enabled_},
                          {"safe_stop", safe_stop_},
                          {"violation", violation}};
    broadcast(msg.dump());

    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (tick_times_.size() < kMaxTimings) tick_times_.push_back(dt);
    return msg;
  }

  /// Start the real-time loop on its own thread.
  void start()
  {
    if (running_.exchange(true)) return;
    loop_ = std::thread([this] { run_loop(); });
  }

  void stop()
  {
    if (!running_.exchange(false)) return;
    if (loop_.joinable()) loop_.join();
  }

  bool running() const { return running_; }

  Vec state() const
  {
    std::lock_guard lk(sim_m_);
    return plant_->state();
  }

  PlantReadout readout() const
  {
    std::lock_guard lk(sim_m_);
    return plant_->readout();
  }

  const Plant & plant() const { return *plant_; }
  const std::optional<ValueSource> & source() const { return source_; }

  SessionStats stats() const
  {
    std::lock_guard lk(sim_m_);
    SessionStats s;
    s.ticks = k_;
    s.missed_ticks = missed_;
    s.violations = violations_;
    s.interventions = interventions_;
    s.infeasible = infeasible_;
    {
      std::lock_guard ml(mail_m_);
      s.rejected_commands = rejected_;
    }
    s.safe_stop = safe_stop_;
    s.tick_compute_times = tick_times_;
    return s;
  }

  /// Header followed by the retained log lines.
  std::vector<std::string> log_lines() const
  {
    std::lock_guard lk(log_m_);
    std::vector<std::string> out;
    out.reserve(log_.size() + 1);
    out.push_back(header_.dump());
    out.insert(out.end(), log_.begin(), log_.end());
    return out;
  }

  void write_log(const std::string & path) const
  {
    std::ofstream out(path);
    if (!out) throw ConfigError("session: cannot write log " + path);
    for (const auto & l : log_lines()) out << l << '\n';
  }

private:
  static constexpr std::size_t kMaxTimings = 1'000'000;

  static nlohmann::json error_message(const std::string & what) { return {{"type", "error"}, {"message", what}}; }

  std::vector<std::string> model_axes(std::size_t n) const
  {
    const auto & names = plant_->model().state_names;
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n && i < names.size(); ++i) out.push_back(names[i]);
    return out;
  }

  void enter_safe_stop(const std::string & reason)
  {
    if (!safe_stop_) emit_event({{"type", "safe_stop"}, {"k", k_}, {"t", t_}, {"reason", reason}});
    safe_stop_ = true;
  }

  void emit_event(const nlohmann::json & ev)
  {
    write_line(ev.dump(), false);
    broadcast(nlohmann::json{{"type", "event"}, {"event", ev}}.dump());
  }

  void write_line(const std::string & line, bool header)
  {
    std::lock_guard lk(log_m_);
    if (!header) {
      if (log_.size() >= cfg_.log_capacity) log_.pop_front();
      log_.push_back(line);
    }
    if (log_file_) {
      log_file_ << line << '\n';
      log_file_.flush();
    }
  }

  void broadcast(const std::string & msg)
  {
    std::lock_guard lk(sub_m_);
    auto it = subscribers_.begin();
    while (it != subscribers_.end()) {
      if (auto q = it->lock()) {
        q->push(msg);
        ++it;
      } else {
        it = subscribers_.erase(it);
      }
    }
  }

  void run_loop()
  {
    using clock = std::chrono::steady_clock;
    const auto per = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(period()));
    auto next = clock::now() + per;
    while (running_) {
      tick();
      const auto now = clock::now();
      if (now > next) {
        // every deadline that passed during this tick counts as missed
        const auto late = (now - next) / per + 1;
        missed_ += static_cast<std::uint64_t>(late);
        {
          std::lock_guard lk(sim_m_);
          emit_event({{"type", "deadline_miss"}, {"k", k_}, {"missed", static_cast<std::uint64_t>(late)}});
        }
        next = now + per;
      } else {
        std::this_thread::sleep_until(next);
        next += per;
      }
    }
  }

  std::unique_ptr<Plant> plant_;
  std::optional<ValueSource> source_;
  SessionConfig cfg_;

  mutable std::mutex sim_m_;
  std::uint64_t k_{0};
  double t_{0};
  bool filter_enabled_{true};
  bool safe_stop_{false};
  Command last_cmd_;
  double last_cmd_time_{0};
  std::uint64_t violations_{0}, interventions_{0}, infeasible_{0};
  std::vector<double> tick_times_;

  mutable std::mutex mail_m_;
  std::optional<Command> pending_;
  std::int64_t last_seq_{-1};
  std::uint64_t rejected_{0};
  bool reset_pending_{false};
  std::optional<bool> toggle_pending_;

  std::mutex sub_m_;
  std::vector<std::weak_ptr<TelemetryQueue>> subscribers_;

  mutable std::mutex log_m_;
  nlohmann::json header_;
  std::deque<std::string> log_;
  std::ofstream log_file_;

  std::atomic<bool> running_{false};
  std::atomic<std::uint64_t> missed_{0};
  std::thread loop_;
};

// ------------------------------------------------------------------------------------------------
// logs and replay

struct TickRecord
{
  std::uint64_t k{0};
  double t{0};
  Command request;
  bool filter_enabled{false};
  Vec u_d, u_out, x;
};

struct SessionLog
{
  nlohmann::json header;
  std::vector<TickRecord> ticks;
  /// resets keyed by the tick count at which they took effect
  std::vector<std::pair<std::uint64_t, Vec>> resets;
};

inline SessionLog read_log(std::istream & in)
{
  SessionLog log;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception & ex) {
      throw ConfigError("log line " + std::to_string(lineno) + ": " + ex.what());
    }
    const auto type = j.value("type", std::string());
    if (log.header.is_null()) {
      if (type != "header") throw VersionError("log: first record is not a header");
      const int v = j.value("schema_version", -1);
      if (v != kLogSchemaVersion) throw VersionError("log: unsupported schema_version " + std::to_string(v));
      log.header = j;
      continue;
    }
    try {
      if (type == "tick") {
        TickRecord r;
        r.k = j.at("k").get<std::uint64_t>();
        r.t = j.at("t").get<double>();
        r.request.steer = j.at("request")[0].get<double>();
        r.request.torque = j.at("request")[1].get<double>();
        r.request.seq = j.at("seq").get<std::int64_t>();
        r.filter_enabled = j.at("filter_enabled").get<bool>();
        r.u_d = vec_from_json(j.at("u_d"));
        r.u_out = vec_from_json(j.at("u_out"));
        r.x = vec_from_json(j.at("x"));
        log.ticks.push_back(std::move(r));
      } else if (type == "reset") {
        log.resets.emplace_back(j.at("k").get<std::uint64_t>(), vec_from_json(j.at("x")));
      }
    } catch (const nlohmann::json::exception & ex) {
      throw ConfigError("log line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return log;
}

inline SessionLog read_log_lines(const std::vector<std::string> & lines)
{
  std::stringstream ss;
  for (const auto & l : lines) ss << l << '\n';
  return read_log(ss);
}

inline SessionLog read_log_file(const std::string & path)
{
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open log " + path);
  return read_log(in);
}

struct ReplayResult
{
  std::vector<double> t;
  std::vector<Vec> states;
  std::vector<Vec> inputs;
  /// constraint value h(x) after each tick
  std::vector<double> h;

  bool empty() const { return states.empty(); }
  double min_h() const { return h.empty() ? std::numeric_limits<double>::infinity() : *std::min_element(h.begin(), h.end()); }
};

/// Re-run the recorded driver requests through the plant with the filter disabled.
inline ReplayResult replay_log(const SessionLog & log)
{
  ReplayResult out;
  if (log.header.is_null() || log.ticks.empty()) return out;
  auto plant = make_plant(log.header.at("plant"));
  const double dt = 1.0 / log.header.at("tick_rate").get<double>();
  const int substeps = log.header.at("substeps").get<int>();
  plant->set_state(vec_from_json(log.header.at("initial_state")));

  std::size_t next_reset = 0;
  for (const auto & rec : log.ticks) {
    // a reset logged at tick count k applies before the tick numbered k + 1
    while (next_reset < log.resets.size() && log.resets[next_reset].first < rec.k) {
      plant->set_state(log.resets[next_reset].second);
      ++next_reset;
    }
    const Vec u = plant->desired_input(rec.request);
    try {
      plant->advance(u, dt, substeps);
    } catch (const DomainError &) {
      break;  // the counterfactual left the model's domain; the trajectory ends here
    }
    out.t.push_back(rec.t);
    out.states.push_back(plant->state());
    out.inputs.push_back(u);
    out.h.push_back(plant->model().h(filter_state(*plant)));
  }
  return out;
}

inline ReplayResult replay_log_file(const std::string & path) { return replay_log(read_log_file(path)); }

}  // namespace pmpsafe
