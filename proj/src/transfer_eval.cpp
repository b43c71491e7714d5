#include "transfer_eval.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "rng.hpp"

namespace rampmeter {

const char* case_name(EvalCase c) {
  switch (c) {
    case EvalCase::Baseline: return "BASELINE";
    case EvalCase::RlNoiseFree: return "RL_NOISE_FREE";
    case EvalCase::RlNoiseTrained: return "RL_NOISE_TRAINED";
  }
  return "?";
}

void PerturbationProfile::validate() const {
  if (actuation_delay_steps < 0) throw std::invalid_argument("perturbation.actuation_delay_steps: must be >= 0");
  if (!(speed_tracking_time_constant >= 0) || !std::isfinite(speed_tracking_time_constant))
    throw std::invalid_argument("perturbation.speed_tracking_time_constant: must be >= 0");
  if (observation_delay_steps < 0) throw std::invalid_argument("perturbation.observation_delay_steps: must be >= 0");
  if (!(geometry_scale_error >= 0 && geometry_scale_error < 1))
    throw std::invalid_argument("perturbation.geometry_scale_error: must be in [0, 1)");
  if (!(sensor_dropout_prob >= 0 && sensor_dropout_prob <= 1))
    throw std::invalid_argument("perturbation.sensor_dropout_prob: must be in [0, 1]");
  if (!(yield_gap >= 0) || !std::isfinite(yield_gap)) throw std::invalid_argument("perturbation.yield_gap: must be >= 0");
}

PerturbationProfile PerturbationProfile::zero() {
  return PerturbationProfile{0, 0.0, 0, 0.0, 0.0, 0.0};
}

bool PerturbationProfile::is_zero() const {
  return actuation_delay_steps == 0 && speed_tracking_time_constant == 0 && observation_delay_steps == 0 &&
         geometry_scale_error == 0 && sensor_dropout_prob == 0 && yield_gap == 0;
}

YieldDecision yield_controller(const VehicleState& vehicle, const World& world, double yield_gap) {
  if (vehicle.route != RouteId::North || yield_gap <= 0) return YieldDecision::Proceed;
  bool inside = false;
  world.network().distance_to_roundabout(vehicle.route, vehicle.progress, &inside);
  if (inside) return YieldDecision::Proceed;
  return world.north_entry_clear(yield_gap) ? YieldDecision::Proceed : YieldDecision::Stop;
}

void apply_sensor_dropout(Observation& o, double p, Rng& rng) {
  if (p <= 0) return;
  std::bernoulli_distribution drop(p);
  for (std::size_t k = 0; k < obs::kEntrySlots; ++k) {
    if (drop(rng)) {
      o[obs::kNorthEntryDist + k] = 1.0;
      o[obs::kNorthEntryVel + k] = 0.0;
    }
    if (drop(rng)) {
      o[obs::kWestEntryDist + k] = 1.0;
      o[obs::kWestEntryVel + k] = 0.0;
    }
  }
  for (std::size_t k = 0; k < obs::kRingSlots; ++k) {
    if (drop(rng)) {
      o[obs::kRingPosition + k] = 0.0;
      o[obs::kRingVelocity + k] = 0.0;
    }
  }
}

namespace {

std::shared_ptr<const RoadNetwork> perturbed_network(const EnvConfig& env, const PerturbationProfile& p, Rng& rng,
                                                     double* factor) {
  const double u = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
  *factor = 1.0;
  if (p.geometry_scale_error == 0) return env.network;
  *factor = 1.0 + p.geometry_scale_error * u;
  return std::make_shared<const RoadNetwork>(env.network->scaled(*factor));
}

SimConfig single_wave(SimConfig s) {
  s.scenario.waves = 1;
  return s;
}

}  // namespace

PerturbedWorld::PerturbedWorld(const EnvConfig& env, const PerturbationProfile& profile, std::uint64_t seed)
    : env_((env.validate(), profile.validate(), env)),
      profile_(profile),
      rng_(make_stream({seed}, Stream::Perturbation)),
      world_(perturbed_network(env_, profile_, rng_, &geometry_factor_), single_wave(env_.sim), seed),
      action_delay_(profile.actuation_delay_steps, Action{}),
      obs_delay_(profile.observation_delay_steps, Observation{}) {
  queues_.sync(world_);
  served_ = sense();
  obs_delay_.reset(served_);
}

Observation PerturbedWorld::sense() {
  Observation o = build_observation(world_, queues_, env_.scales);
  apply_sensor_dropout(o, profile_.sensor_dropout_prob, rng_);
  return o;
}

std::vector<CollisionEvent> PerturbedWorld::step(const std::optional<Action>& policy_output) {
  StepHooks hooks;
  hooks.speed_lag_tau = profile_.speed_tracking_time_constant;
  hooks.yield_gap = profile_.yield_gap;
  ActionMap actions;
  if (policy_output) {
    const Action applied = action_delay_.push(*policy_output);
    actions = assign_actions(applied, queues_, NoiseConfig{false, 0.0}, rng_, env_.sim.limits);
  }
  auto events = world_.step(actions, hooks);
  queues_.sync(world_);
  served_ = obs_delay_.push(sense());
  return events;
}

std::uint64_t trial_seed(std::uint64_t master_seed, int trial) {
  auto g = make_stream({master_seed, static_cast<std::uint64_t>(trial)}, Stream::Dynamics);
  return g();
}

TrialResult run_trial(const EnvConfig& env, const PolicyParameters* policy, const PerturbationProfile& profile,
                      std::uint64_t seed, const EvalOptions& opts) {
  PerturbedWorld pw(env, profile, seed);
  Rng policy_rng = make_stream({seed}, Stream::PolicySample);
  TrialResult r;
  r.seed = seed;
  r.geometry_factor = pw.geometry_factor();

  double speed_sum = 0.0;
  std::size_t samples = 0;
  while (r.steps < env.horizon && !pw.world().drained()) {
    std::optional<Action> a;
    if (policy) {
      a = opts.sample_actions ? sample_action(*policy, pw.observation(), policy_rng)
                              : mean_action(*policy, pw.observation());
      for (double x : *a)
        if (!std::isfinite(x)) throw std::runtime_error("policy produced a non-finite action");
    }
    r.collisions += static_cast<int>(pw.step(a).size());
    for (const auto& [id, v] : pw.world().vehicles()) {
      speed_sum += v.velocity;
      ++samples;
    }
    ++r.steps;
  }

  const World& w = pw.world();
  r.avg_velocity = samples ? speed_sum / static_cast<double>(samples) : 0.0;
  for (const auto& v : w.retired()) r.travel_times.push_back(*v.exited_at - v.entered_at);
  // Vehicles that crashed or are still driving are censored at the end time.
  for (const auto& v : w.collided()) r.travel_times.push_back(w.time() - v.entered_at);
  for (const auto& [id, v] : w.vehicles()) r.travel_times.push_back(w.time() - v.entered_at);
  if (!r.travel_times.empty()) {
    double sum = 0.0;
    for (double t : r.travel_times) {
      sum += t;
      r.max_travel_time = std::max(r.max_travel_time, t);
    }
    r.avg_travel_time = sum / static_cast<double>(r.travel_times.size());
  }
  const auto& sim = env.sim;
  r.metering_score =
      metering_score(w.trajectory(), w.network(), sim.idm.jam_distance, sim.scenario.vehicle_length, sim.limits.dt);
  if (opts.keep_trajectories) r.trajectory = w.trajectory();
  return r;
}

EvalReport evaluate(EvalCase c, const EnvConfig& env, const PolicyParameters* policy,
                    const PerturbationProfile& profile, int trials, std::uint64_t seed, const EvalOptions& opts) {
  if (trials < 1) throw std::invalid_argument("trials: must be >= 1");
  if (c == EvalCase::Baseline) {
    policy = nullptr;
  } else if (!policy) {
    throw std::invalid_argument(std::string(case_name(c)) + ": a policy is required");
  }
  EvalReport rep;
  rep.eval_case = c;
  rep.trials = trials;
  int with_collisions = 0;
  for (int k = 0; k < trials; ++k) {
    TrialResult t = run_trial(env, policy, profile, trial_seed(seed, k), opts);
    rep.avg_velocity += t.avg_velocity / trials;
    rep.avg_travel_time += t.avg_travel_time / trials;
    rep.max_travel_time += t.max_travel_time / trials;
    rep.metering_score += t.metering_score / trials;
    rep.collision_count += t.collisions;
    if (t.collisions > 0) ++with_collisions;
    rep.per_trial.push_back(std::move(t));
  }
  rep.collision_storm = 2 * with_collisions > trials;
  return rep;
}

double metering_score(const std::vector<TrajectoryRecord>& log, const RoadNetwork& net, double jam_distance,
                      double vehicle_length, double dt, double window) {
  const double merge = net.merge_point();
  struct Snapshot {
    std::vector<double> north, west;
  };
  std::map<double, Snapshot> by_time;
  for (const auto& rec : log) {
    if (std::abs(rec.position - merge) > window) continue;
    auto& s = by_time[rec.time];
    (rec.route == RouteId::North ? s.north : s.west).push_back(rec.position);
  }
  double score = 0.0;
  for (const auto& [t, s] : by_time) {
    bool overlap = false;
    for (double xn : s.north) {
      for (double xw : s.west) {
        if (std::abs(xn - xw) - vehicle_length < 2.0 * jam_distance) {
          overlap = true;
          break;
        }
      }
      if (overlap) break;
    }
    if (overlap) score += dt;
  }
  return score;
}

}  // namespace rampmeter
