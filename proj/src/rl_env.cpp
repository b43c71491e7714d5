#include "rl_env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rng.hpp"

namespace rampmeter {

void NormalizationScales::validate() const {
  for (double s : {position, north_entry, west_entry, velocity, queue_north, queue_west})
    if (!(s > 0) || !std::isfinite(s)) throw std::invalid_argument("observation scales: must be positive");
}

void NoiseConfig::validate() const {
  if (!(std >= 0)) throw std::invalid_argument("noise.std: must be >= 0");
}

void RewardConfig::validate() const {
  if (!(v_max > 0)) throw std::invalid_argument("reward.v_max: must be positive");
  if (!(slow_threshold > 0)) throw std::invalid_argument("reward.slow_threshold: must be positive");
  if (!(standstill_weight >= 0)) throw std::invalid_argument("reward.standstill_weight: must be >= 0");
}

void EnvConfig::validate() const {
  if (!network) throw std::invalid_argument("env: missing network");
  if (horizon < 1) throw std::invalid_argument("train.horizon: must be >= 1");
  scales.validate();
  noise.validate();
  reward.validate();
}

void RlQueue::sync(const World& world) {
  const auto& active = world.vehicles();
  for (auto& q : q_)
    q.erase(std::remove_if(q.begin(), q.end(), [&](VehicleId id) { return !active.count(id); }), q.end());
  // `active` is id-ordered and ids follow arrival order.
  for (const auto& [id, v] : active) {
    if (v.controller != Controller::Rl) continue;
    auto& q = q_[route_index(v.route)];
    if (std::find(q.begin(), q.end(), id) == q.end()) q.push_back(id);
  }
}

std::optional<VehicleId> RlQueue::front(RouteId r) const {
  const auto& q = q_[route_index(r)];
  if (q.empty()) return std::nullopt;
  return q.front();
}

int waiting_count(const World& world, RouteId r, double slow_threshold) {
  int n = static_cast<int>(world.pending()[route_index(r)].size());
  for (const auto& [id, v] : world.vehicles()) {
    if (v.route != r) continue;
    bool inside = false;
    world.network().distance_to_roundabout(r, v.progress, &inside);
    if (!inside && v.velocity < slow_threshold) ++n;
  }
  return n;
}

namespace {
double clip1(double x) { return std::clamp(x, -1.0, 1.0); }
}  // namespace

Observation build_observation(const World& world, const RlQueue& queues, const NormalizationScales& scales) {
  Observation o{};
  const RoadNetwork& net = world.network();
  const auto& active = world.vehicles();

  for (std::size_t k = 0; k < obs::kEntrySlots; ++k) {
    o[obs::kNorthEntryDist + k] = 1.0;
    o[obs::kWestEntryDist + k] = 1.0;
  }
  for (std::size_t k = 0; k < 2; ++k) {
    o[obs::kAvHeadway + k] = 1.0;
    o[obs::kAvTailway + k] = 1.0;
  }

  for (RouteId r : kRoutes) {
    const std::size_t k = static_cast<std::size_t>(route_index(r));
    auto id = queues.front(r);
    if (!id) continue;
    auto it = active.find(*id);
    if (it == active.end()) continue;
    const VehicleState& av = it->second;
    o[obs::kAvPosition + k] = net.position_1d(av.route, av.progress) / scales.position;
    o[obs::kAvVelocity + k] = av.velocity / scales.velocity;
    if (auto lead = world.leader_of(av)) o[obs::kAvHeadway + k] = lead->headway / scales.position;
    if (auto follow = world.follower_of(av.id)) o[obs::kAvTailway + k] = follow->second / scales.position;
  }

  for (RouteId r : kRoutes) {
    std::vector<std::pair<double, double>> entry;  // (distance, velocity)
    for (const auto& [id, v] : active) {
      if (v.route != r) continue;
      bool inside = false;
      const double d = net.distance_to_roundabout(r, v.progress, &inside);
      if (!inside) entry.emplace_back(d, v.velocity);
    }
    std::sort(entry.begin(), entry.end());
    const bool north = r == RouteId::North;
    const std::size_t dist_off = north ? obs::kNorthEntryDist : obs::kWestEntryDist;
    const std::size_t vel_off = north ? obs::kNorthEntryVel : obs::kWestEntryVel;
    const double dist_scale = north ? scales.north_entry : scales.west_entry;
    for (std::size_t k = 0; k < std::min(entry.size(), obs::kEntrySlots); ++k) {
      o[dist_off + k] = entry[k].first / dist_scale;
      o[vel_off + k] = entry[k].second / scales.velocity;
    }
    o[obs::kQueue + static_cast<std::size_t>(route_index(r))] =
        waiting_count(world, r) / (north ? scales.queue_north : scales.queue_west);
  }

  std::vector<std::pair<double, double>> ring;  // (position, velocity)
  for (const auto& [id, v] : active)
    if (net.on_roundabout(v.route, v.progress)) ring.emplace_back(net.position_1d(v.route, v.progress), v.velocity);
  std::sort(ring.begin(), ring.end());
  for (std::size_t k = 0; k < std::min(ring.size(), obs::kRingSlots); ++k) {
    o[obs::kRingPosition + k] = ring[k].first / scales.position;
    o[obs::kRingVelocity + k] = ring[k].second / scales.velocity;
  }

  for (double& x : o) x = clip1(x);
  return o;
}

void inject_state_noise(Observation& o, const NoiseConfig& noise, Rng& rng) {
  if (!noise.enabled || noise.std <= 0) return;
  std::normal_distribution<double> n(0.0, noise.std);
  for (double& x : o) x = clip1(x + n(rng));
}

ActionMap assign_actions(const Action& policy_output, const RlQueue& queues, const NoiseConfig& noise, Rng& rng,
                         const SimLimits& limits) {
  Action a = policy_output;
  if (noise.enabled && noise.std > 0) {
    std::normal_distribution<double> n(0.0, noise.std);
    for (double& x : a) x += n(rng);
  }
  ActionMap out;
  for (RouteId r : kRoutes) {
    auto id = queues.front(r);
    if (!id) continue;  // element unused
    out.emplace(*id, std::clamp(a[static_cast<std::size_t>(route_index(r))], limits.a_min, limits.a_max));
  }
  return out;
}

double compute_reward(std::span<const double> velocities, const RewardConfig& cfg) {
  const std::size_t n = velocities.size();
  if (n == 0) return 0.0;
  double sq = 0.0;
  int stopped = 0;
  int slow = 0;
  for (double v : velocities) {
    sq += (v - cfg.v_max) * (v - cfg.v_max);
    if (v == 0.0) ++stopped;
    if (v < cfg.slow_threshold) ++slow;
  }
  const double norm = cfg.v_max * std::sqrt(static_cast<double>(n));
  return std::max(norm - std::sqrt(sq), 0.0) / norm - cfg.standstill_weight * stopped - slow;
}

double compute_reward(const World& world, const RewardConfig& cfg) {
  std::vector<double> v;
  v.reserve(world.vehicles().size());
  for (const auto& [id, s] : world.vehicles()) v.push_back(s.velocity);
  return compute_reward(v, cfg);
}

RoundaboutEnv::RoundaboutEnv(EnvConfig cfg, std::uint64_t seed)
    : cfg_((cfg.validate(), std::move(cfg))),
      seed_(seed),
      world_(cfg_.network, cfg_.sim, seed),
      state_rng_(make_stream({seed}, Stream::StateNoise)),
      action_rng_(make_stream({seed}, Stream::ActionNoise)) {
  world_.set_recording(false);
}

Observation RoundaboutEnv::observe() {
  Observation o = build_observation(world_, queues_, cfg_.scales);
  inject_state_noise(o, cfg_.noise, state_rng_);
  return o;
}

Observation RoundaboutEnv::reset() {
  world_.reset();
  queues_.clear();
  queues_.sync(world_);
  state_rng_ = make_stream({seed_}, Stream::StateNoise);
  action_rng_ = make_stream({seed_}, Stream::ActionNoise);
  steps_ = 0;
  done_ = false;
  return observe();
}

RoundaboutEnv::StepResult RoundaboutEnv::step(const Action& raw_action) {
  if (done_) throw std::logic_error("step() on a finished episode; call reset()");
  for (double a : raw_action)
    if (!std::isfinite(a)) throw std::runtime_error("policy produced a non-finite action");
  StepResult res;
  const ActionMap actions = assign_actions(raw_action, queues_, cfg_.noise, action_rng_, cfg_.sim.limits);
  res.collisions = world_.step(actions);
  queues_.sync(world_);
  res.reward = compute_reward(world_, cfg_.reward);
  ++steps_;
  done_ = !res.collisions.empty() || steps_ >= cfg_.horizon;
  res.done = done_;
  res.observation = observe();
  return res;
}

EpisodeMetrics summarize(const World& world, double speed_sum, std::size_t speed_samples) {
  EpisodeMetrics m;
  m.avg_velocity = speed_samples ? speed_sum / static_cast<double>(speed_samples) : 0.0;
  for (const auto& v : world.retired()) m.travel_times.push_back(*v.exited_at - v.entered_at);
  if (!m.travel_times.empty()) {
    double sum = 0.0;
    for (double t : m.travel_times) {
      sum += t;
      m.max_travel_time = std::max(m.max_travel_time, t);
    }
    m.avg_travel_time = sum / static_cast<double>(m.travel_times.size());
  }
  return m;
}

Episode run_episode(const ActionFn& policy, const EnvConfig& cfg, std::uint64_t seed, EpisodeMetrics* metrics,
                    Rng* policy_rng) {
  RoundaboutEnv env(cfg, seed);
  Rng own_rng = make_stream({seed}, Stream::PolicySample);
  Rng& prng = policy_rng ? *policy_rng : own_rng;

  Episode ep;
  ep.observations.reserve(static_cast<std::size_t>(cfg.horizon));
  Observation o = env.reset();
  double speed_sum = 0.0;
  std::size_t samples = 0;
  int collisions = 0;
  double total = 0.0;
  for (int t = 0; t < cfg.horizon; ++t) {
    const Action a = policy(o, prng);
    ep.observations.push_back(o);
    ep.actions.push_back(a);
    auto res = env.step(a);
    ep.rewards.push_back(res.reward);
    total += res.reward;
    for (const auto& [id, v] : env.world().vehicles()) {
      speed_sum += v.velocity;
      ++samples;
    }
    if (!res.collisions.empty()) {
      collisions += static_cast<int>(res.collisions.size());
      ep.terminated_early = true;
      break;
    }
    o = res.observation;
  }
  if (metrics) {
    *metrics = summarize(env.world(), speed_sum, samples);
    metrics->collisions = collisions;
    metrics->total_reward = total;
    metrics->steps = static_cast<int>(ep.size());
  }
  return ep;
}

}  // namespace rampmeter
