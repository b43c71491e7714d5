#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "netgeom.hpp"
#include "vehicle_dynamics.hpp"

namespace rampmeter {

struct ScenarioConfig {
  int west_platoon = 4;
  int north_platoon = 3;
  bool leaders_rl_capable = true;
  double spawn_gap = 5.0;
  double spawn_speed = 0.0;
  double spawn_period = 72.0;  // <= 0: only the initial wave
  int waves = 0;               // 0: unlimited
  double vehicle_length = 5.0;
  // Per-vehicle v0 drawn around limits.v_max; idm.desired_speed when off.
  bool stochastic_desired_speed = true;
  double desired_speed_rel_std = 0.2;
  // Cross-route vehicles approaching the merge are projected onto each
  // other's lane once both are this close to the merge point.
  double merge_zone = 30.0;

  void validate(double jam_distance) const;
};

struct SimConfig {
  IdmParams idm;
  SimLimits limits;
  ScenarioConfig scenario;
};

struct TrajectoryRecord {
  double time;
  VehicleId id;
  RouteId route;
  double position;
  double velocity;
  Controller controller;  // Rl when the vehicle followed a policy action
};

struct CollisionEvent {
  double time;
  VehicleId follower;
  VehicleId leader;
  double gap;
};

struct LeaderInfo {
  VehicleId id;
  double headway;
  double lead_velocity;
  bool projected;  // cross-route vehicle not yet on the shared lane
};

// Modifiers used by the transfer evaluation; the defaults leave the nominal
// dynamics untouched.
struct StepHooks {
  double speed_lag_tau = 0.0;  // first-order lag on policy-actuated vehicles
  double yield_gap = 0.0;      // > 0 enables the north-entry yield rule
};

using ActionMap = std::map<VehicleId, double>;

class World {
 public:
  World(std::shared_ptr<const RoadNetwork> network, SimConfig config, std::uint64_t seed);

  // Time zero, empty road, first wave scheduled and inserted.
  void reset();
  std::vector<CollisionEvent> step(const ActionMap& rl_actions, const StepHooks& hooks = {});

  // Scripted set-ups: empty the world (no further waves) and place vehicles by hand.
  void clear();
  void add_vehicle(const VehicleState& v);

  std::optional<LeaderInfo> leader_of(VehicleId id) const;
  std::optional<LeaderInfo> leader_of(const VehicleState& ego) const;
  // Nearest vehicle whose leader is `id`, as (follower id, gap).
  std::optional<std::pair<VehicleId, double>> follower_of(VehicleId id) const;

  // Yield rule at the north entry: true when no roundabout vehicle is within
  // `gap` metres upstream of the merge point.
  bool north_entry_clear(double gap) const;

  double position_1d(const VehicleState& v) const { return net_->position_1d(v.route, v.progress); }

  double time() const { return time_; }
  const RoadNetwork& network() const { return *net_; }
  const std::shared_ptr<const RoadNetwork>& network_ptr() const { return net_; }
  const SimConfig& config() const { return cfg_; }
  const std::map<VehicleId, VehicleState>& vehicles() const { return active_; }
  const std::array<std::deque<VehicleState>, 2>& pending() const { return pending_; }
  const std::vector<VehicleState>& retired() const { return retired_; }
  const std::vector<VehicleState>& collided() const { return collided_; }
  std::size_t spawned() const { return spawned_; }
  std::size_t created() const { return next_id_; }
  int waves_spawned() const { return waves_spawned_; }
  bool drained() const;  // nothing active or pending and no further waves

  void set_recording(bool on) { recording_ = on; }
  const std::vector<TrajectoryRecord>& trajectory() const { return log_; }

 private:
  void spawn_platoons();
  void insert_pending();
  void record(const ActionMap& controlled);
  // Cross-route candidates listed in `ignore` are skipped.
  std::optional<LeaderInfo> leader_of(const VehicleState& ego, const std::set<VehicleId>* ignore) const;

  std::shared_ptr<const RoadNetwork> net_;
  SimConfig cfg_;
  std::uint64_t seed_;
  Rng dynamics_rng_;

  double time_ = 0.0;
  double next_spawn_ = 0.0;
  int waves_spawned_ = 0;
  VehicleId next_id_ = 0;
  std::size_t spawned_ = 0;
  std::map<VehicleId, VehicleState> active_;
  std::array<std::deque<VehicleState>, 2> pending_{};
  std::vector<VehicleState> retired_;
  std::vector<VehicleState> collided_;
  bool recording_ = true;
  std::vector<TrajectoryRecord> log_;
};

}  // namespace rampmeter
