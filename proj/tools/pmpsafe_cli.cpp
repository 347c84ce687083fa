// Command-line front end: grid solves, training, evaluation sweeps, the live
// shared-control server and log replay.

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <pmpsafe/eval.hpp>
#include <pmpsafe/hj_grid.hpp>
#include <pmpsafe/sim_server.hpp>
#include <pmpsafe/sim_session.hpp>
#include <pmpsafe/train.hpp>

using namespace pmpsafe;

namespace {

std::atomic<bool> g_stop{false};

struct CorridorOpts
{
  double speed{10.0};
  double curvature_bound{1.0 / 12.0};
  double ref_curvature{0.0};
  double half_width{3.0};

  void add(CLI::App * app)
  {
    app->add_option("--speed", speed, "corridor speed, m/s");
    app->add_option("--curvature-bound", curvature_bound, "input bound, 1/m");
    app->add_option("--ref-curvature", ref_curvature, "0 for a straight, 1/R for a turn");
    app->add_option("--half-width", half_width, "corridor half width, m");
  }

  CorridorConfig config() const { return {speed, curvature_bound, ref_curvature, half_width}; }
  SystemModel model() const { return kinematic_corridor_model(config()); }
};

nlohmann::json read_json(const std::string & path)
{
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception & ex) {
    throw ConfigError(path + ": " + ex.what());
  }
}

Vec corridor_box_lo(double half_width)
{
  Vec lo(2);
  lo << -(half_width + 1.0), -1.2;
  return lo;
}

bool ends_with(const std::string & s, const std::string & suffix)
{
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// .cbvf files are grids, anything else is a network model file.
ValueSource load_source(const std::string & path, const SystemModel & sys, bool extrapolate,
                        std::shared_ptr<const GridValueFunction> * grid_out = nullptr)
{
  if (ends_with(path, ".cbvf")) {
    auto g = std::make_shared<const GridValueFunction>(load_grid(path));
    if (grid_out) *grid_out = g;
    return grid_source(g);
  }
  return net_source(std::make_shared<const ValueNet>(load_model(path, sys)), extrapolate);
}

std::vector<std::uint64_t> parse_seeds(const std::string & s)
{
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    const auto dash = tok.find('-');
    if (dash != std::string::npos) {
      const auto a = std::stoull(tok.substr(0, dash)), b = std::stoull(tok.substr(dash + 1));
      for (auto k = a; k <= b; ++k) out.push_back(k);
    } else if (!tok.empty()) {
      out.push_back(std::stoull(tok));
    }
  }
  if (out.empty()) throw ConfigError("no seeds given");
  return out;
}

NominalPolicy make_policy(const std::string & name, const SystemModel & sys, std::uint64_t seed)
{
  if (name == "racer") return corridor_racer(sys, 4.5, 2.0, 0.05, 0.4, seed);
  if (name == "seeker") return corridor_edge_seeker(sys);
  throw ConfigError("unknown policy '" + name + "' (racer or seeker)");
}

void write_text(const std::string & path, const std::string & text)
{
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << text;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"pmpsafe: value-function safety filters for a racing corridor and a single-track vehicle"};
  app.require_subcommand(1);

  // ---- solve-grid
  CorridorOpts grid_corr;
  double grid_gamma = 0.1, grid_horizon = 1.0, grid_cfl = 0.9;
  std::size_t grid_n = 101;
  std::string grid_out = "corridor.cbvf", grid_ls;
  auto * solve = app.add_subcommand("solve-grid", "solve the corridor value function on a grid");
  grid_corr.add(solve);
  solve->add_option("--gamma", grid_gamma, "discount rate");
  solve->add_option("--horizon", grid_horizon, "time-to-go horizon, s");
  solve->add_option("--nodes", grid_n, "nodes per axis");
  solve->add_option("--cfl", grid_cfl, "CFL number");
  solve->add_option("--out", grid_out, "output grid file");
  solve->add_option("--level-set", grid_ls, "optional CSV of the zero level set at the horizon");

  // ---- train
  CorridorOpts train_corr;
  std::string train_cfg, train_strategy, train_seeds = "0", train_dir = ".";
  int train_epochs = 0;
  auto * trn = app.add_subcommand("train", "train value networks, one per seed");
  train_corr.add(trn);
  trn->add_option("--config", train_cfg, "JSON training config");
  trn->add_option("--strategy", train_strategy, "pmp or uniform");
  trn->add_option("--seeds", train_seeds, "comma list or range, e.g. 0-3");
  trn->add_option("--epochs", train_epochs, "override the total epoch count (10/80/10 split)");
  trn->add_option("--out-dir", train_dir, "directory for model and report files");

  // ---- filter-demo
  CorridorOpts demo_corr;
  std::string demo_model, demo_policy = "racer", demo_csv = "-";
  double demo_duration = 3.0, demo_e0 = 0.0, demo_dphi0 = 0.0;
  std::uint64_t demo_seed = 0;
  bool demo_no_filter = false;
  auto * demo = app.add_subcommand("filter-demo", "one filtered rollout as CSV");
  demo_corr.add(demo);
  demo->add_option("--model", demo_model, "grid (.cbvf) or network model file")->required();
  demo->add_option("--policy", demo_policy, "racer or seeker");
  demo->add_option("--duration", demo_duration, "seconds");
  demo->add_option("--e0", demo_e0);
  demo->add_option("--dphi0", demo_dphi0);
  demo->add_option("--seed", demo_seed);
  demo->add_flag("--no-filter", demo_no_filter);
  demo->add_option("--csv", demo_csv, "output CSV, - for stdout");

  // ---- eval-failure
  CorridorOpts fail_corr;
  std::string fail_model, fail_policy = "racer";
  RolloutConfig fail_rc;
  bool fail_no_filter = false;
  auto * efail = app.add_subcommand("eval-failure", "failure rate of filtered rollouts");
  fail_corr.add(efail);
  efail->add_option("--model", fail_model, "grid (.cbvf) or network model file")->required();
  efail->add_option("--policy", fail_policy, "racer or seeker");
  efail->add_option("--rollouts", fail_rc.n_rollouts);
  efail->add_option("--horizon", fail_rc.horizon, "seconds; default is the value horizon");
  efail->add_option("--seed", fail_rc.seed);
  efail->add_option("--gamma", fail_rc.filter.gamma);
  efail->add_flag("--no-filter", fail_no_filter);

  // ---- eval-iou
  CorridorOpts iou_corr;
  std::string iou_model, iou_oracle;
  double iou_tau = -1.0;
  auto * eiou = app.add_subcommand("eval-iou", "intersection over union against a grid oracle");
  iou_corr.add(eiou);
  eiou->add_option("--model", iou_model, "network model file")->required();
  eiou->add_option("--oracle", iou_oracle, "grid file")->required();
  eiou->add_option("--tau", iou_tau, "time-to-go; default is the model horizon");

  // ---- sweep
  CorridorOpts sweep_corr;
  std::string sweep_cfg, sweep_oracle, sweep_seeds = "0-3", sweep_out = "sweep", sweep_policy = "racer",
                                                    sweep_models;
  std::size_t sweep_rollouts = 500;
  auto * sweep = app.add_subcommand("sweep", "train and evaluate a list of configurations over seeds");
  sweep_corr.add(sweep);
  sweep->add_option("--config", sweep_cfg, "JSON: {\"cells\": [{\"label\":..., \"train\":{...}}, ...]}")->required();
  sweep->add_option("--oracle", sweep_oracle, "grid file for IOU")->required();
  sweep->add_option("--seeds", sweep_seeds);
  sweep->add_option("--rollouts", sweep_rollouts);
  sweep->add_option("--policy", sweep_policy);
  sweep->add_option("--out", sweep_out, "prefix for .json and .csv");
  sweep->add_option("--save-models", sweep_models, "directory to keep every trained model");

  // ---- serve
  CorridorOpts serve_corr;
  std::string serve_model, serve_track, serve_log, serve_address = "127.0.0.1";
  unsigned short serve_port = 8765;
  double serve_rate = 50.0, serve_duration = 0.0, serve_gamma = -1.0;
  bool serve_idle_zero = false, serve_no_filter = false;
  auto * serve = app.add_subcommand("serve", "run a live session over WebSocket or line TCP");
  serve_corr.add(serve);
  serve->add_option("--model", serve_model, "grid (.cbvf), network model, or 'envelope' for the vehicle");
  serve->add_option("--track", serve_track, "vehicle parameter file; selects the vehicle plant");
  serve->add_option("--port", serve_port);
  serve->add_option("--address", serve_address);
  serve->add_option("--tick-rate", serve_rate, "Hz, at most 200");
  serve->add_option("--gamma", serve_gamma, "default 1 for the vehicle envelope, 0.1 otherwise");
  serve->add_option("--log", serve_log, "JSON-lines session log");
  serve->add_option("--duration", serve_duration, "seconds, 0 runs until interrupted");
  serve->add_flag("--idle-zero", serve_idle_zero, "zero requests when the client goes quiet");
  serve->add_flag("--no-filter", serve_no_filter);

  // ---- replay
  std::string replay_in, replay_csv = "-";
  auto * replay = app.add_subcommand("replay", "counterfactual re-simulation of a session log");
  replay->add_option("--log", replay_in)->required();
  replay->add_option("--csv", replay_csv, "output CSV, - for stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*solve) {
      const auto sys = grid_corr.model();
      const auto vf = solve_cbvf(sys, {{-grid_corr.half_width - 1.0, grid_corr.half_width + 1.0, grid_n}, {-1.2, 1.2, grid_n}},
                                 grid_gamma, grid_horizon, grid_cfl);
      save_grid(vf, grid_out);
      if (!grid_ls.empty()) write_level_set_csv(zero_level_set(vf, vf.horizon()), grid_ls, sys.state_names);
      std::cout << nlohmann::json{{"out", grid_out}, {"slices", vf.taus.size()}, {"dt", vf.dt}, {"system", vf.system_id}}.dump()
                << '\n';
    } else if (*trn) {
      const auto sys = train_corr.model();
      TrainConfig base;
      base.box_lo = corridor_box_lo(train_corr.half_width);
      base.box_hi = -base.box_lo;
      if (!train_cfg.empty()) base = train_config_from_json(read_json(train_cfg), base);
      if (!train_strategy.empty()) base.strategy = parse_strategy(train_strategy);
      if (train_epochs > 0) {
        base.pretrain_epochs = train_epochs / 10;
        base.curriculum_epochs = train_epochs * 8 / 10;
        base.finetune_epochs = train_epochs - base.pretrain_epochs - base.curriculum_epochs;
      }
      for (auto seed : parse_seeds(train_seeds)) {
        auto c = base;
        c.seed = seed;
        const auto [net, rep] = train(sys, c);
        const std::string stem = train_dir + "/model_" + (c.strategy == SamplingStrategy::PmpAugmented ? "pmp" : "uniform") +
                                 "_seed" + std::to_string(seed);
        save_model(net, stem + ".json", {{"train", to_json(c)}});
        nlohmann::json r = {{"seed", seed},
                            {"wall_time", rep.wall_time},
                            {"weights_checksum", rep.weights_checksum},
                            {"pmp_pool_size", rep.pmp_pool_size},
                            {"residual_first", rep.residual_trace.front()},
                            {"residual_last", rep.residual_trace.back()},
                            {"residual_trace", rep.residual_trace}};
        write_text(stem + ".report.json", r.dump() + "\n");
        std::cout << stem << ".json residual " << rep.residual_trace.front() << " -> " << rep.residual_trace.back() << " in "
                  << rep.wall_time << " s\n";
      }
    } else if (*demo) {
      const auto sys = demo_corr.model();
      const auto src = load_source(demo_model, sys, true);
      const auto policy = make_policy(demo_policy, sys, demo_seed);
      const double dt = 0.01;
      Vec x(2);
      x << demo_e0, demo_dphi0;
      std::ostringstream csv;
      csv << "t,e,dphi,value,u_d,u_out,intervened,status\n";
      csv.precision(17);
      for (int k = 0; k * dt < demo_duration; ++k) {
        const double t = k * dt;
        const Vec u_d = policy(t, x, 0);
        FilterResult fr;
        fr.u_out = u_d;
        if (!demo_no_filter) fr = filter_step(src, sys, x, u_d);
        csv << t << ',' << x[0] << ',' << x[1] << ',' << fr.value << ',' << u_d[0] << ',' << fr.u_out[0] << ','
            << fr.intervened << ',' << (fr.status == FilterStatus::Ok ? "ok" : "infeasible") << '\n';
        for (int i = 0; i < 4; ++i) x = rk4_step(sys, x, fr.u_out, dt / 4);
      }
      write_text(demo_csv, csv.str());
    } else if (*efail) {
      const auto sys = fail_corr.model();
      const auto src = load_source(fail_model, sys, true);
      fail_rc.filter_enabled = !fail_no_filter;
      const auto rep = failure_rate(src, sys, make_policy(fail_policy, sys, fail_rc.seed), fail_rc);
      const auto & w = rep.filter_wall_times;
      std::cout << nlohmann::json{{"failure_rate", rep.failure_rate},
                                  {"failures", rep.failures},
                                  {"rollouts", rep.rollouts},
                                  {"interventions", rep.interventions},
                                  {"infeasible_steps", rep.infeasible_steps},
                                  {"out_of_domain_steps", rep.out_of_domain_steps},
                                  {"filter_wall_p50_s", finite_or_null({quantile(w, 0.5)})[0]},
                                  {"filter_wall_p99_s", finite_or_null({quantile(w, 0.99)})[0]}}
                       .dump(2)
                << '\n';
    } else if (*eiou) {
      const auto sys = iou_corr.model();
      const auto net = std::make_shared<const ValueNet>(load_model(iou_model, sys));
      const auto oracle = load_grid(iou_oracle);
      const double tau = iou_tau < 0 ? net->horizon() : iou_tau;
      std::cout << nlohmann::json{{"iou", iou(net_source(net, true), oracle, tau)}, {"tau", tau}}.dump() << '\n';
    } else if (*sweep) {
      const auto sys = sweep_corr.model();
      const auto j = read_json(sweep_cfg);
      std::vector<SweepCell> cells;
      TrainConfig base;
      base.box_lo = corridor_box_lo(sweep_corr.half_width);
      base.box_hi = -base.box_lo;
      for (const auto & c : j.at("cells")) cells.push_back({c.at("label").get<std::string>(), train_config_from_json(c.at("train"), base)});
      const auto oracle = load_grid(sweep_oracle);
      CompareOptions o;
      o.rollout.n_rollouts = sweep_rollouts;
      o.on_trained = [&](const SweepCell & cell, std::uint64_t seed, const ValueNet & net, const TrainReport & rep) {
        std::cerr << cell.label << " seed " << seed << " trained in " << rep.wall_time << " s\n";
        if (!sweep_models.empty()) {
          save_model(net, sweep_models + "/" + cell.label + "_seed" + std::to_string(seed) + ".json",
                     {{"train", to_json(cell.train)}});
        }
      };
      const auto rep = compare_strategies(sys, cells, parse_seeds(sweep_seeds), oracle, make_policy(sweep_policy, sys, 0), o);
      write_text(sweep_out + ".json", to_json(rep).dump(2) + "\n");
      write_text(sweep_out + ".csv", to_csv(rep));
      std::cout << to_csv(rep);
    } else if (*serve) {
      std::unique_ptr<Plant> plant;
      std::optional<ValueSource> src;
      std::shared_ptr<const GridValueFunction> grid;
      if (!serve_track.empty()) {
        VehiclePlant::Config pc;
        pc.vehicle = load_vehicle_config(serve_track);
        plant = std::make_unique<VehiclePlant>(pc);
        if (serve_model == "envelope" || serve_model.empty()) src = vehicle_speed_envelope(pc.vehicle);
        else src = net_source(std::make_shared<const ValueNet>(load_model(serve_model, plant->model())));
      } else {
        CorridorPlant::Config pc;
        pc.corridor = serve_corr.config();
        plant = std::make_unique<CorridorPlant>(pc);
        if (!serve_model.empty()) src = load_source(serve_model, plant->model(), false, &grid);
      }
      SessionConfig sc;
      sc.tick_rate = serve_rate;
      const bool envelope = src && src->kind() == "speed_envelope";
      sc.filter.gamma = serve_gamma >= 0 ? serve_gamma : (envelope ? 1.0 : 0.1);
      sc.filter_enabled = !serve_no_filter && src.has_value();
      sc.idle = serve_idle_zero ? IdlePolicy::Zero : IdlePolicy::HoldLast;
      sc.log_path = serve_log;
      sc.log_capacity = serve_log.empty() ? 1'000'000 : 10'000;
      Session session(std::move(plant), src, sc);
      SimServer::Options so;
      so.address = serve_address;
      so.port = serve_port;
      so.level_set = session.level_set(grid);
      SimServer server(session, so);
      std::signal(SIGINT, [](int) { g_stop = true; });
      std::signal(SIGTERM, [](int) { g_stop = true; });
      session.start();
      server.start();
      std::cerr << "serving on " << serve_address << ':' << server.port() << " at " << serve_rate << " Hz\n";
      const auto t0 = std::chrono::steady_clock::now();
      while (!g_stop) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
        if (serve_duration > 0 &&
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() >= serve_duration) {
          break;
        }
      }
      server.stop();
      session.stop();
      const auto st = session.stats();
      std::cerr << nlohmann::json{{"ticks", st.ticks},
                                  {"missed_ticks", st.missed_ticks},
                                  {"violations", st.violations},
                                  {"interventions", st.interventions},
                                  {"safe_stop", st.safe_stop}}
                       .dump()
                << '\n';
    } else if (*replay) {
      const auto log = read_log_file(replay_in);
      const auto rep = replay_log(log);
      std::ostringstream csv;
      csv.precision(17);
      csv << "t";
      if (!log.header.is_null()) {
        const auto plant = make_plant(log.header.at("plant"));
        for (const auto & n : plant->model().state_names) csv << ',' << n;
        // the corridor plant carries path progress after the model state
        if (plant->state().size() > plant->model().state_dim) csv << ",s";
      }
      csv << ",h\n";
      for (std::size_t k = 0; k < rep.states.size(); ++k) {
        csv << rep.t[k];
        for (Eigen::Index i = 0; i < rep.states[k].size(); ++i) csv << ',' << rep.states[k][i];
        csv << ',' << rep.h[k] << '\n';
      }
      write_text(replay_csv, csv.str());
      std::cerr << "replayed " << rep.states.size() << " ticks, min h " << rep.min_h() << '\n';
    }
  } catch (const Error & ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 2;
  } catch (const std::exception & ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}
