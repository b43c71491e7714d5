#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "sim_engine.hpp"

namespace rampmeter {

inline constexpr std::size_t kObsDim = 54;
inline constexpr std::size_t kActionDim = 2;

using Observation = std::array<double, kObsDim>;
using Action = std::array<double, kActionDim>;

// Offsets of each block in the observation vector (layout version 1).
namespace obs {
inline constexpr std::size_t kAvPosition = 0;       // 2: north AV, west AV
inline constexpr std::size_t kAvVelocity = 2;       // 2
inline constexpr std::size_t kNorthEntryDist = 4;   // 6
inline constexpr std::size_t kWestEntryDist = 10;   // 6
inline constexpr std::size_t kNorthEntryVel = 16;   // 6
inline constexpr std::size_t kWestEntryVel = 22;    // 6
inline constexpr std::size_t kAvHeadway = 28;       // 2
inline constexpr std::size_t kAvTailway = 30;       // 2
inline constexpr std::size_t kQueue = 32;           // 2
inline constexpr std::size_t kRingPosition = 34;    // 10
inline constexpr std::size_t kRingVelocity = 44;    // 10
inline constexpr std::size_t kEntrySlots = 6;
inline constexpr std::size_t kRingSlots = 10;
inline constexpr std::uint32_t kLayoutVersion = 1;
}  // namespace obs

struct NormalizationScales {
  double position = 443.0;  // AV positions, headways, tailways
  double north_entry = 74.3;
  double west_entry = 86.6;
  double velocity = 15.0;
  double queue_north = 16.0;
  double queue_west = 19.0;

  void validate() const;
};

struct NoiseConfig {
  bool enabled = false;
  double std = 0.1;

  void validate() const;
};

struct RewardConfig {
  double v_max = 15.0;
  double standstill_weight = 1.5;
  double slow_threshold = 0.3;

  void validate() const;
};

// RL-capable vehicles per entry, in order of arrival. Only the front of each
// queue is driven by the policy.
class RlQueue {
 public:
  // Appends newly inserted RL-capable vehicles and pops those that left.
  void sync(const World& world);
  std::optional<VehicleId> front(RouteId r) const;
  const std::deque<VehicleId>& ids(RouteId r) const { return q_[route_index(r)]; }
  void clear() {
    for (auto& q : q_) q.clear();
  }

 private:
  std::array<std::deque<VehicleId>, 2> q_{};
};

// Vehicles on the entry of `r` that are stopped or crawling, plus those not
// yet inserted.
int waiting_count(const World& world, RouteId r, double slow_threshold = 0.3);

Observation build_observation(const World& world, const RlQueue& queues, const NormalizationScales& scales);
void inject_state_noise(Observation& o, const NoiseConfig& noise, Rng& rng);
ActionMap assign_actions(const Action& policy_output, const RlQueue& queues, const NoiseConfig& noise, Rng& rng,
                         const SimLimits& limits);

double compute_reward(std::span<const double> velocities, const RewardConfig& cfg);
double compute_reward(const World& world, const RewardConfig& cfg);

struct EnvConfig {
  std::shared_ptr<const RoadNetwork> network;
  SimConfig sim;
  NormalizationScales scales;
  NoiseConfig noise;
  RewardConfig reward;
  int horizon = 500;

  void validate() const;
};

struct EpisodeMetrics {
  double avg_velocity = 0.0;
  std::vector<double> travel_times;
  double avg_travel_time = 0.0;
  double max_travel_time = 0.0;
  int collisions = 0;
  double total_reward = 0.0;
  int steps = 0;
};

struct Episode {
  std::vector<Observation> observations;  // as seen by the policy (noised)
  std::vector<Action> actions;            // raw policy samples, before noise and clipping
  std::vector<double> rewards;
  bool terminated_early = false;

  std::size_t size() const { return rewards.size(); }
};

// Maps an observation to a raw action; the generator is the policy's own stream.
using ActionFn = std::function<Action(const Observation&, Rng&)>;

// Step-level environment: one world plus queues and noise streams.
class RoundaboutEnv {
 public:
  RoundaboutEnv(EnvConfig cfg, std::uint64_t seed);

  Observation reset();
  struct StepResult {
    Observation observation;
    double reward = 0.0;
    bool done = false;
    std::vector<CollisionEvent> collisions;
  };
  StepResult step(const Action& raw_action);

  const World& world() const { return world_; }
  World& world() { return world_; }
  const RlQueue& queues() const { return queues_; }
  const EnvConfig& config() const { return cfg_; }
  int steps() const { return steps_; }

 private:
  Observation observe();

  EnvConfig cfg_;
  std::uint64_t seed_;
  World world_;
  RlQueue queues_;
  Rng state_rng_;
  Rng action_rng_;
  int steps_ = 0;
  bool done_ = false;
};

// Runs one episode from a fresh reset. Stops at the horizon or the first collision.
Episode run_episode(const ActionFn& policy, const EnvConfig& cfg, std::uint64_t seed,
                    EpisodeMetrics* metrics = nullptr, Rng* policy_rng = nullptr);

// Average speed over vehicle-steps and per-vehicle travel times.
EpisodeMetrics summarize(const World& world, double speed_sum, std::size_t speed_samples);

}  // namespace rampmeter
