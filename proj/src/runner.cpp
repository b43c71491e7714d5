#include "runner.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace rampmeter {

void prepare_output_dir(const fs::path& dir) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw IoError("output path '" + dir.string() + "' is not a directory");
    if (!fs::is_empty(dir))
      throw IoError("output directory '" + dir.string() + "' is not empty; refusing to overwrite");
  }
  fs::create_directories(dir);
}

std::string file_header(std::uint64_t seed) {
  return std::string("# rampmeter ") + kVersion + " seed=" + std::to_string(seed);
}

std::string fmt(double x) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  return f;
}

void write_effective_config(const RunConfig& cfg, const fs::path& out) {
  auto f = open_out(out / "effective_config.yaml");
  f << dump_config(cfg);
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

PolicyParameters load_checked_policy(const fs::path& path) {
  PolicyParameters p = load_policy(path);
  if (p.input_dim() != static_cast<int>(kObsDim) || p.output_dim() != static_cast<int>(kActionDim))
    throw std::runtime_error("policy '" + path.string() + "' has shape " + std::to_string(p.input_dim()) + " -> " +
                             std::to_string(p.output_dim()) + ", expected " + std::to_string(kObsDim) + " -> " +
                             std::to_string(kActionDim));
  return p;
}

EvalOptions eval_options(const RunConfig& cfg) {
  EvalOptions o;
  o.sample_actions = cfg.eval_sample_actions;
  return o;
}

void write_trial_logs(const fs::path& out, const EvalReport& rep, const std::string& prefix, std::uint64_t seed) {
  for (std::size_t k = 0; k < rep.per_trial.size(); ++k)
    write_trajectory_csv(out / (prefix + "trial" + std::to_string(k) + ".csv"), rep.per_trial[k].trajectory, seed);
}

void warn_storms(std::ostream& log, const std::vector<EvalReport>& reports) {
  for (const auto& r : reports)
    if (r.collision_storm)
      log << "WARNING: collision storm in " << case_name(r.eval_case) << ": collisions in more than half of "
          << r.trials << " trials\n";
}

}  // namespace

void write_trajectory_csv(const fs::path& path, const std::vector<TrajectoryRecord>& log, std::uint64_t seed) {
  auto f = open_out(path);
  f << file_header(seed) << "\n";
  f << "time,vehicle_id,route,position_1d,velocity,controller\n";
  for (const auto& r : log)
    f << fmt(r.time) << ',' << r.id << ',' << route_name(r.route) << ',' << fmt(r.position) << ','
      << fmt(r.velocity) << ',' << (r.controller == Controller::Rl ? "rl" : "idm") << '\n';
}

std::vector<TrajectoryRecord> read_trajectory_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read trajectory '" + path.string() + "'");
  std::vector<TrajectoryRecord> out;
  std::string line;
  bool header = false;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "time,vehicle_id,route,position_1d,velocity,controller")
        throw std::runtime_error(path.string() + ": unexpected header '" + line + "'");
      header = true;
      continue;
    }
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    try {
      if (cols.size() != 6) throw std::invalid_argument("expected 6 columns");
      TrajectoryRecord r;
      r.time = std::stod(cols[0]);
      r.id = std::stoll(cols[1]);
      r.route = route_from_name(cols[2]);
      r.position = std::stod(cols[3]);
      r.velocity = std::stod(cols[4]);
      if (cols[5] != "rl" && cols[5] != "idm") throw std::invalid_argument("bad controller '" + cols[5] + "'");
      r.controller = cols[5] == "rl" ? Controller::Rl : Controller::Idm;
      out.push_back(r);
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw std::runtime_error(path.string() + ": missing header");
  return out;
}

void write_report_csv(const fs::path& path, const std::vector<EvalReport>& reports, std::uint64_t seed) {
  auto f = open_out(path);
  f << file_header(seed) << "\n";
  for (const auto& r : reports)
    if (r.collision_storm) f << "# collision storm: " << case_name(r.eval_case) << "\n";
  f << "case,avg_velocity,avg_time,max_time,collisions,trials\n";
  for (const auto& r : reports)
    f << case_name(r.eval_case) << ',' << fmt(r.avg_velocity) << ',' << fmt(r.avg_travel_time) << ','
      << fmt(r.max_travel_time) << ',' << r.collision_count << ',' << r.trials << '\n';
}

void write_per_trial_csv(const fs::path& path, const std::vector<EvalReport>& reports, std::uint64_t seed) {
  auto f = open_out(path);
  f << file_header(seed) << "\n";
  f << "case,trial,seed,geometry_factor,avg_velocity,avg_time,max_time,collisions,steps,metering_score\n";
  for (const auto& r : reports)
    for (std::size_t k = 0; k < r.per_trial.size(); ++k) {
      const auto& t = r.per_trial[k];
      f << case_name(r.eval_case) << ',' << k << ',' << t.seed << ',' << fmt(t.geometry_factor) << ','
        << fmt(t.avg_velocity) << ',' << fmt(t.avg_travel_time) << ',' << fmt(t.max_travel_time) << ','
        << t.collisions << ',' << t.steps << ',' << fmt(t.metering_score) << '\n';
    }
}

void write_reward_curve_csv(const fs::path& path, const std::vector<IterationRecord>& curve, std::uint64_t seed) {
  auto f = open_out(path);
  f << file_header(seed) << "\n";
  f << "iteration,mean_return,std_return,mean_kl,steps\n";
  for (const auto& r : curve)
    f << r.iteration << ',' << fmt(r.mean_return) << ',' << fmt(r.std_return) << ',' << fmt(r.mean_kl) << ','
      << r.steps << '\n';
}

void print_report_table(std::ostream& os, const std::vector<EvalReport>& reports, const PerturbationProfile& p) {
  os << "perturbation profile: actuation_delay_steps=" << p.actuation_delay_steps
     << " speed_tracking_time_constant=" << p.speed_tracking_time_constant
     << " observation_delay_steps=" << p.observation_delay_steps
     << " geometry_scale_error=" << p.geometry_scale_error << " sensor_dropout_prob=" << p.sensor_dropout_prob
     << " yield_gap=" << p.yield_gap << "\n";
  os << std::left << std::setw(18) << "case" << std::right << std::setw(12) << "avg vel" << std::setw(12)
     << "avg time" << std::setw(12) << "max time" << std::setw(12) << "collisions" << std::setw(10) << "metering"
     << std::setw(8) << "trials" << "\n";
  os << std::fixed << std::setprecision(2);
  for (const auto& r : reports) {
    os << std::left << std::setw(18) << case_name(r.eval_case) << std::right << std::setw(12) << r.avg_velocity
       << std::setw(12) << r.avg_travel_time << std::setw(12) << r.max_travel_time << std::setw(12)
       << r.collision_count << std::setw(10) << r.metering_score << std::setw(8) << r.trials
       << (r.collision_storm ? "  COLLISION STORM" : "") << "\n";
  }
  os.unsetf(std::ios::fixed);
  os << std::setprecision(6);
}

TrainResult run_train(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  cfg.validate();
  prepare_output_dir(out);
  write_effective_config(cfg, out);
  const EnvConfig env = cfg.env();
  const TrainConfig tc = cfg.train_config();
  std::vector<IterationRecord> curve;
  auto on_iter = [&](const IterationRecord& r, const PolicyParameters& p) {
    curve.push_back(r);
    write_reward_curve_csv(out / "reward_curve.csv", curve, cfg.master_seed);
    if (cfg.checkpoint_every > 0 && r.iteration % cfg.checkpoint_every == 0)
      save_policy(p, out / ("policy_iter_" + std::to_string(r.iteration) + ".bin"));
    log << "iteration " << r.iteration << "/" << tc.iterations << "  mean_return " << fmt(r.mean_return)
        << "  mean_kl " << fmt(r.mean_kl) << "  steps " << r.steps << "\n";
  };
  TrainResult res = train(env, tc, on_iter);
  write_reward_curve_csv(out / "reward_curve.csv", res.curve, cfg.master_seed);
  save_policy(res.params, out / "policy.bin");
  return res;
}

EvalReport run_baseline(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  cfg.validate();
  prepare_output_dir(out);
  write_effective_config(cfg, out);
  EvalReport rep = evaluate(EvalCase::Baseline, cfg.env(), nullptr, PerturbationProfile::zero(), cfg.eval_trials,
                            cfg.master_seed, eval_options(cfg));
  write_trial_logs(out, rep, "trajectory_", cfg.master_seed);
  write_report_csv(out / "metrics.csv", {rep}, cfg.master_seed);
  write_per_trial_csv(out / "per_trial.csv", {rep}, cfg.master_seed);
  print_report_table(log, {rep}, PerturbationProfile::zero());
  warn_storms(log, {rep});
  return rep;
}

EvalReport run_eval(const RunConfig& cfg, const fs::path& policy, const fs::path& out, std::ostream& log) {
  cfg.validate();
  const PolicyParameters p = load_checked_policy(policy);
  prepare_output_dir(out);
  write_effective_config(cfg, out);
  const EvalCase c = cfg.noise.enabled ? EvalCase::RlNoiseTrained : EvalCase::RlNoiseFree;
  EvalReport rep =
      evaluate(c, cfg.env(), &p, PerturbationProfile::zero(), cfg.eval_trials, cfg.master_seed, eval_options(cfg));
  write_trial_logs(out, rep, "trajectory_", cfg.master_seed);
  write_report_csv(out / "metrics.csv", {rep}, cfg.master_seed);
  write_per_trial_csv(out / "per_trial.csv", {rep}, cfg.master_seed);
  print_report_table(log, {rep}, PerturbationProfile::zero());
  warn_storms(log, {rep});
  return rep;
}

std::vector<EvalReport> run_transfer_eval(const RunConfig& cfg, const fs::path& policy_noise_trained,
                                          const std::optional<fs::path>& policy_noise_free, const fs::path& out,
                                          std::ostream& log) {
  cfg.validate();
  const PolicyParameters trained = load_checked_policy(policy_noise_trained);
  std::optional<PolicyParameters> free;
  if (policy_noise_free) free = load_checked_policy(*policy_noise_free);
  prepare_output_dir(out);
  write_effective_config(cfg, out);

  const EnvConfig env = cfg.env();
  const EvalOptions opts = eval_options(cfg);
  // Every case sees the same trial seeds, hence the same perturbation draws.
  std::vector<EvalReport> reports;
  reports.push_back(evaluate(EvalCase::Baseline, env, nullptr, cfg.perturbation, cfg.eval_trials, cfg.master_seed, opts));
  if (free)
    reports.push_back(
        evaluate(EvalCase::RlNoiseFree, env, &*free, cfg.perturbation, cfg.eval_trials, cfg.master_seed, opts));
  else
    log << "note: no noise-free policy given; RL_NOISE_FREE row omitted\n";
  reports.push_back(
      evaluate(EvalCase::RlNoiseTrained, env, &trained, cfg.perturbation, cfg.eval_trials, cfg.master_seed, opts));

  for (const auto& r : reports)
    write_trial_logs(out, r, "trajectory_" + lower(case_name(r.eval_case)) + "_", cfg.master_seed);
  write_report_csv(out / "report.csv", reports, cfg.master_seed);
  write_per_trial_csv(out / "per_trial.csv", reports, cfg.master_seed);
  print_report_table(log, reports, cfg.perturbation);
  warn_storms(log, reports);
  return reports;
}

void run_export_plots(const RunConfig& cfg, const std::vector<fs::path>& trajectories, const fs::path& out,
                      std::ostream& log) {
  cfg.validate();
  if (trajectories.empty()) throw std::invalid_argument("export-plots: no trajectory files given");
  std::vector<std::vector<TrajectoryRecord>> logs;
  for (const auto& p : trajectories) logs.push_back(read_trajectory_csv(p));
  prepare_output_dir(out);
  write_effective_config(cfg, out);

  const RoadNetwork net = RoadNetwork::from_geometry(cfg.geometry);
  auto summary = open_out(out / "plots_summary.csv");
  summary << file_header(cfg.master_seed) << "\n" << "log,vehicles,duration,metering_score\n";
  std::set<std::string> used;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    std::string stem = trajectories[i].stem().string();
    while (used.count(stem)) stem += "_" + std::to_string(i);
    used.insert(stem);
    const auto& lg = logs[i];

    // Space-time diagram: one polyline per vehicle.
    std::vector<TrajectoryRecord> sorted = lg;
    std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
      return a.id != b.id ? a.id < b.id : a.time < b.time;
    });
    {
      auto f = open_out(out / ("spacetime_" + stem + ".csv"));
      f << file_header(cfg.master_seed) << "\n" << "vehicle_id,route,controller,time,position_1d\n";
      for (const auto& r : sorted)
        f << r.id << ',' << route_name(r.route) << ',' << (r.controller == Controller::Rl ? "rl" : "idm") << ','
          << fmt(r.time) << ',' << fmt(r.position) << '\n';
    }

    // Velocity profile: one column per vehicle, blank where absent.
    std::set<VehicleId> ids;
    std::map<double, std::map<VehicleId, double>> by_time;
    for (const auto& r : lg) {
      ids.insert(r.id);
      by_time[r.time][r.id] = r.velocity;
    }
    {
      auto f = open_out(out / ("velocity_profile_" + stem + ".csv"));
      f << file_header(cfg.master_seed) << "\n" << "time";
      for (VehicleId id : ids) f << ",v_" << id;
      f << ",mean\n";
      for (const auto& [t, row] : by_time) {
        f << fmt(t);
        double sum = 0.0;
        for (VehicleId id : ids) {
          f << ',';
          if (auto it = row.find(id); it != row.end()) {
            f << fmt(it->second);
            sum += it->second;
          }
        }
        f << ',' << fmt(row.empty() ? 0.0 : sum / static_cast<double>(row.size())) << '\n';
      }
    }
    const double duration = by_time.empty() ? 0.0 : by_time.rbegin()->first - by_time.begin()->first;
    summary << stem << ',' << ids.size() << ',' << fmt(duration) << ','
            << fmt(metering_score(lg, net, cfg.sim.idm.jam_distance, cfg.sim.scenario.vehicle_length,
                                  cfg.sim.limits.dt))
            << '\n';
    log << "exported " << stem << " (" << ids.size() << " vehicles)\n";
  }
}

}  // namespace rampmeter
