#include "sim_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "rng.hpp"

namespace rampmeter {

void ScenarioConfig::validate(double jam_distance) const {
  if (west_platoon < 1) throw std::invalid_argument("scenario.west_platoon: must be >= 1");
  if (north_platoon < 1) throw std::invalid_argument("scenario.north_platoon: must be >= 1");
  if (!(spawn_gap > jam_distance)) throw std::invalid_argument("scenario.spawn_gap: must exceed idm.jam_distance");
  if (!(spawn_speed >= 0)) throw std::invalid_argument("scenario.spawn_speed: must be >= 0");
  if (waves < 0) throw std::invalid_argument("scenario.waves: must be >= 0");
  if (!(vehicle_length > 0)) throw std::invalid_argument("scenario.vehicle_length: must be positive");
  if (!(desired_speed_rel_std >= 0)) throw std::invalid_argument("scenario.desired_speed_rel_std: must be >= 0");
  if (!(merge_zone >= 0)) throw std::invalid_argument("scenario.merge_zone: must be >= 0");
}

World::World(std::shared_ptr<const RoadNetwork> network, SimConfig config, std::uint64_t seed)
    : net_(std::move(network)), cfg_(std::move(config)), seed_(seed) {
  if (!net_) throw std::invalid_argument("World: null network");
  cfg_.idm.validate();
  cfg_.limits.validate();
  cfg_.scenario.validate(cfg_.idm.jam_distance);
  reset();
}

void World::reset() {
  dynamics_rng_ = make_stream({seed_}, Stream::Dynamics);
  time_ = 0.0;
  next_spawn_ = 0.0;
  waves_spawned_ = 0;
  next_id_ = 0;
  spawned_ = 0;
  active_.clear();
  for (auto& p : pending_) p.clear();
  retired_.clear();
  collided_.clear();
  log_.clear();
  spawn_platoons();
  record({});
}

void World::clear() {
  active_.clear();
  for (auto& p : pending_) p.clear();
  retired_.clear();
  collided_.clear();
  log_.clear();
  spawned_ = 0;
  next_spawn_ = std::numeric_limits<double>::infinity();
}

void World::add_vehicle(const VehicleState& v) {
  if (active_.count(v.id)) throw std::invalid_argument("add_vehicle: duplicate id");
  if (!(v.progress >= 0 && v.progress <= net_->route(v.route).total_length))
    throw std::domain_error("add_vehicle: progress outside route");
  active_.emplace(v.id, v);
  next_id_ = std::max(next_id_, v.id + 1);
  ++spawned_;
}

bool World::drained() const {
  if (!active_.empty()) return false;
  for (const auto& p : pending_)
    if (!p.empty()) return false;
  const auto& s = cfg_.scenario;
  const bool more_waves = std::isfinite(next_spawn_) && s.spawn_period > 0 && (s.waves == 0 || waves_spawned_ < s.waves);
  return !more_waves;
}

void World::spawn_platoons() {
  const auto& s = cfg_.scenario;
  const bool due = std::isfinite(next_spawn_) && time_ + 1e-9 >= next_spawn_;
  const bool allowed = (s.waves == 0 || waves_spawned_ < s.waves) && (waves_spawned_ == 0 || s.spawn_period > 0);
  if (due && allowed) {
    for (RouteId r : {RouteId::West, RouteId::North}) {
      const int size = r == RouteId::West ? s.west_platoon : s.north_platoon;
      for (int k = 0; k < size; ++k) {
        VehicleState v;
        v.id = next_id_++;
        v.route = r;
        v.progress = 0.0;
        v.velocity = s.spawn_speed;
        v.controller = (k == 0 && s.leaders_rl_capable) ? Controller::Rl : Controller::Idm;
        v.length = s.vehicle_length;
        v.desired_speed = s.stochastic_desired_speed
                              ? sample_desired_speed(cfg_.limits.v_max, dynamics_rng_, s.desired_speed_rel_std)
                              : cfg_.idm.desired_speed;
        pending_[route_index(r)].push_back(v);
      }
    }
    ++waves_spawned_;
    next_spawn_ += s.spawn_period;
  }
  insert_pending();
}

void World::insert_pending() {
  const auto& s = cfg_.scenario;
  for (RouteId r : kRoutes) {
    auto& queue = pending_[route_index(r)];
    if (queue.empty()) continue;
    // Rearmost vehicle already on this route.
    const VehicleState* last = nullptr;
    for (const auto& [id, v] : active_)
      if (v.route == r && (!last || v.progress < last->progress)) last = &v;
    const double gap = last ? last->progress - last->length : std::numeric_limits<double>::infinity();
    if (gap < cfg_.idm.jam_distance + s.spawn_gap) continue;
    VehicleState v = queue.front();
    queue.pop_front();
    v.progress = 0.0;
    v.entered_at = time_;
    active_.emplace(v.id, v);
    ++spawned_;
  }
}

std::optional<LeaderInfo> World::leader_of(VehicleId id) const {
  auto it = active_.find(id);
  if (it == active_.end()) return std::nullopt;
  return leader_of(it->second);
}

std::optional<LeaderInfo> World::leader_of(const VehicleState& ego) const { return leader_of(ego, nullptr); }

std::optional<LeaderInfo> World::leader_of(const VehicleState& ego, const std::set<VehicleId>* ignore) const {
  const RoadNetwork& net = *net_;
  const double xe = net.position_1d(ego.route, ego.progress);
  const double merge = net.merge_point();
  const double zone = cfg_.scenario.merge_zone;
  std::optional<LeaderInfo> best;
  for (const auto& [oid, o] : active_) {
    if (oid == ego.id) continue;
    const double xo = net.position_1d(o.route, o.progress);
    const bool ahead = xo > xe || (xo == xe && oid < ego.id);
    if (!ahead) continue;
    const int seg = net.segment_id_at(o.route, o.progress);
    bool projected = false;
    if (!net.route_uses(ego.route, seg)) {
      // Only the approaches to the merge point conflict across routes.
      const bool both_upstream = o.route != ego.route && xe < merge && xo < merge;
      if (!both_upstream || merge - xe > zone || merge - xo > zone) continue;
      if (ignore && ignore->count(oid)) continue;
      projected = true;
    }
    const double headway = xo - xe - o.length;
    if (!best || headway < best->headway) best = LeaderInfo{oid, headway, o.velocity, projected};
  }
  return best;
}

std::optional<std::pair<VehicleId, double>> World::follower_of(VehicleId id) const {
  std::optional<std::pair<VehicleId, double>> best;
  for (const auto& [oid, o] : active_) {
    if (oid == id) continue;
    auto lead = leader_of(o);
    if (lead && lead->id == id && (!best || lead->headway < best->second)) best = {{oid, lead->headway}};
  }
  return best;
}

bool World::north_entry_clear(double gap) const {
  const double merge = net_->merge_point();
  for (const auto& [id, v] : active_) {
    if (v.route == RouteId::North) continue;
    if (!net_->on_roundabout(v.route, v.progress)) continue;
    const double x = net_->position_1d(v.route, v.progress);
    const double upstream = merge - x;
    if (upstream >= 0 && upstream < gap) return false;
  }
  return true;
}

std::vector<CollisionEvent> World::step(const ActionMap& rl_actions, const StepHooks& hooks) {
  const SimLimits& lim = cfg_.limits;
  const IdmParams& idm = cfg_.idm;
  const RoadNetwork& net = *net_;
  const bool yield_active = hooks.yield_gap > 0;
  const bool north_clear = !yield_active || north_entry_clear(hooks.yield_gap);

  // North vehicles held at the entry line. One that can no longer stop
  // within the braking limit keeps going; ring traffic ignores held ones.
  std::set<VehicleId> held;
  if (!north_clear) {
    for (const auto& [id, v] : active_) {
      if (v.route != RouteId::North) continue;
      bool inside = false;
      const double d = net.distance_to_roundabout(v.route, v.progress, &inside);
      if (inside || d > cfg_.scenario.merge_zone) continue;
      const double v_stop = safe_velocity(d + idm.jam_distance, 0.0, idm.jam_distance, lim);
      if (std::max(0.0, v.velocity + lim.a_min * lim.dt) <= v_stop) held.insert(id);
    }
  }

  // Synchronous update: every control decision sees the pre-step state.
  std::vector<std::pair<VehicleId, double>> next_velocity;
  next_velocity.reserve(active_.size());
  ActionMap controlled;
  for (const auto& [id, v] : active_) {
    std::optional<LeaderInfo> lead = leader_of(v, v.route == RouteId::West ? &held : nullptr);
    if (held.count(id)) {
      // Stop line at the entry, modelled as a stationary obstacle.
      const double h = net.distance_to_roundabout(v.route, v.progress) + idm.jam_distance;
      if (!lead || h < lead->headway) lead = LeaderInfo{-1, h, 0.0, false};
    }

    double v_cmd = 0.0;
    if (auto act = rl_actions.find(id); act != rl_actions.end()) {
      const double a = std::clamp(act->second, lim.a_min, lim.a_max);
      v_cmd = step_velocity_av(v.velocity, a, lim);
      if (hooks.speed_lag_tau > 0) v_cmd = v.velocity + (lim.dt / hooks.speed_lag_tau) * (v_cmd - v.velocity);
      if (lead && lead->id == -1) v_cmd = std::min(v_cmd, safe_velocity(lead->headway, 0.0, idm.jam_distance, lim));
      controlled.emplace(id, a);
    } else if (!lead) {
      v_cmd = step_velocity_idm(v.velocity, idm_accel_free(v, idm, dynamics_rng_), lim,
                                std::numeric_limits<double>::infinity());
    } else if (lead->headway > 0) {
      const double a = idm_accel(v, lead->headway, lead->lead_velocity, idm, dynamics_rng_);
      v_cmd = step_velocity_idm(v.velocity, a, lim,
                                safe_velocity(lead->headway, lead->lead_velocity, idm.jam_distance, lim));
    } else {
      // Overlapping a projected leader at the merge: brake as hard as allowed.
      v_cmd = std::max(0.0, std::min(v.velocity + lim.a_min * lim.dt,
                                     safe_velocity(0.0, lead->lead_velocity, idm.jam_distance, lim)));
    }
    next_velocity.emplace_back(id, v_cmd);
  }

  const double t_next = time_ + lim.dt;
  for (const auto& [id, vel] : next_velocity) {
    VehicleState& v = active_.at(id);
    v.velocity = vel;
    v.progress += vel * lim.dt;
  }
  for (auto it = active_.begin(); it != active_.end();) {
    const double total = net.route(it->second.route).total_length;
    if (it->second.progress >= total) {
      it->second.progress = total;
      it->second.exited_at = t_next;
      retired_.push_back(it->second);
      it = active_.erase(it);
    } else {
      ++it;
    }
  }

  std::vector<CollisionEvent> events;
  std::set<VehicleId> crashed;
  for (const auto& [id, v] : active_) {
    auto lead = leader_of(v);
    if (!lead || lead->projected || lead->headway > 0) continue;
    // Only bodies sharing a lane can touch.
    const RouteId lead_route = active_.at(lead->id).route;
    if (net.route_uses(lead_route, net.segment_id_at(v.route, v.progress))) {
      events.push_back({t_next, id, lead->id, lead->headway});
      crashed.insert(id);
      crashed.insert(lead->id);
    }
  }
  // Vehicles involved in a collision stop and leave the road.
  for (VehicleId id : crashed) {
    auto it = active_.find(id);
    it->second.velocity = 0.0;
    collided_.push_back(it->second);
    active_.erase(it);
  }

  time_ = t_next;
  spawn_platoons();
  record(controlled);
  return events;
}

void World::record(const ActionMap& controlled) {
  if (!recording_) return;
  for (const auto& [id, v] : active_) {
    const Controller c = controlled.count(id) ? Controller::Rl : Controller::Idm;
    log_.push_back({time_, id, v.route, net_->position_1d(v.route, v.progress), v.velocity, c});
  }
}

}  // namespace rampmeter
