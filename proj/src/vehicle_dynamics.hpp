#pragma once

#include <cstdint>
#include <optional>
#include <random>

#include "netgeom.hpp"

namespace rampmeter {

using VehicleId = std::int64_t;
using Rng = std::mt19937_64;

enum class Controller : int { Idm = 0, Rl = 1 };

struct IdmParams {
  double time_headway = 1.0;    // T [s]
  double accel = 1.0;           // a [m/s^2]
  double decel = 1.5;           // b [m/s^2]
  double delta = 4.0;
  double jam_distance = 2.0;    // s0 [m]
  double desired_speed = 30.0;  // v0 [m/s]
  double accel_noise_std = 0.1;

  void validate() const;
};

struct SimLimits {
  double a_max = 1.0;
  double a_min = -1.0;
  double v_max = 15.0;
  double dt = 1.0;

  void validate() const;
};

struct VehicleState {
  VehicleId id = 0;
  RouteId route = RouteId::West;
  double progress = 0.0;
  double velocity = 0.0;
  Controller controller = Controller::Idm;  // Rl means RL-capable
  double length = 5.0;
  double desired_speed = 30.0;  // per-vehicle v0
  double entered_at = 0.0;
  std::optional<double> exited_at;
};

// Acceleration of the IDM, without the stochastic term. `headway` is the
// bumper-to-bumper gap and must be positive.
double idm_accel(double velocity, double headway, double lead_velocity, const IdmParams& p,
                 double desired_speed);
// No leader: the interaction term is dropped.
double idm_accel_free(double velocity, const IdmParams& p, double desired_speed);

// Deterministic part plus the N(0, accel_noise_std) perturbation drawn from `rng`.
double idm_accel(const VehicleState& ego, double headway, double lead_velocity, const IdmParams& p,
                 Rng& rng);
double idm_accel_free(const VehicleState& ego, const IdmParams& p, Rng& rng);

// Gaussian around the speed limit with 20% relative spread, floored at
// 10% of the limit.
double sample_desired_speed(double speed_limit, Rng& rng, double rel_std = 0.2);

// Largest speed from which the ego can still stop at least `jam_distance`
// behind a leader that brakes at |a_min| now, given one step of reaction.
double safe_velocity(double headway, double lead_velocity, double jam_distance,
                     const SimLimits& limits);

// Saturated Euler update for human drivers; `speed_cap` is the safe velocity
// (infinity when unconstrained).
double step_velocity_idm(double velocity, double accel, const SimLimits& limits,
                         double speed_cap);
// Euler update for RL-controlled vehicles: no safety cap.
double step_velocity_av(double velocity, double action_accel, const SimLimits& limits);

}  // namespace rampmeter
