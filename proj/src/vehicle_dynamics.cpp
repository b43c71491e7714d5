#include "vehicle_dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rampmeter {

void IdmParams::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0) || !std::isfinite(v)) throw std::invalid_argument(std::string("idm.") + name + ": must be positive");
  };
  positive(time_headway, "time_headway");
  positive(accel, "accel");
  positive(decel, "decel");
  positive(jam_distance, "jam_distance");
  positive(desired_speed, "desired_speed");
  if (!(delta >= 1)) throw std::invalid_argument("idm.delta: must be >= 1");
  if (!(accel_noise_std >= 0)) throw std::invalid_argument("idm.accel_noise_std: must be >= 0");
}

void SimLimits::validate() const {
  if (!(a_max > 0)) throw std::invalid_argument("limits.a_max: must be positive");
  if (!(a_min < 0)) throw std::invalid_argument("limits.a_min: must be negative");
  if (!(v_max > 0) || !std::isfinite(v_max)) throw std::invalid_argument("limits.v_max: must be positive");
  if (!(dt > 0) || !std::isfinite(dt)) throw std::invalid_argument("limits.dt: must be positive");
}

double idm_accel_free(double velocity, const IdmParams& p, double desired_speed) {
  return p.accel * (1.0 - std::pow(velocity / desired_speed, p.delta));
}

double idm_accel(double velocity, double headway, double lead_velocity, const IdmParams& p,
                 double desired_speed) {
  if (!(headway > 0)) throw std::domain_error("idm_accel: non-positive headway (collision)");
  const double dv = velocity - lead_velocity;
  const double s_star =
      p.jam_distance + std::max(0.0, velocity * p.time_headway + velocity * dv / (2.0 * std::sqrt(p.accel * p.decel)));
  const double ratio = s_star / headway;
  return p.accel * (1.0 - std::pow(velocity / desired_speed, p.delta) - ratio * ratio);
}

namespace {
double accel_noise(const IdmParams& p, Rng& rng) {
  if (p.accel_noise_std <= 0) return 0.0;
  std::normal_distribution<double> n(0.0, p.accel_noise_std);
  return n(rng);
}
}  // namespace

double idm_accel(const VehicleState& ego, double headway, double lead_velocity, const IdmParams& p,
                 Rng& rng) {
  return idm_accel(ego.velocity, headway, lead_velocity, p, ego.desired_speed) + accel_noise(p, rng);
}

double idm_accel_free(const VehicleState& ego, const IdmParams& p, Rng& rng) {
  return idm_accel_free(ego.velocity, p, ego.desired_speed) + accel_noise(p, rng);
}

double sample_desired_speed(double speed_limit, Rng& rng, double rel_std) {
  if (!(speed_limit > 0)) throw std::invalid_argument("sample_desired_speed: speed limit must be positive");
  if (rel_std <= 0) return speed_limit;
  std::normal_distribution<double> n(speed_limit, rel_std * speed_limit);
  return std::max(n(rng), 0.1 * speed_limit);
}

double safe_velocity(double headway, double lead_velocity, double jam_distance, const SimLimits& limits) {
  const double b = std::abs(limits.a_min);
  const double reaction = b * limits.dt;
  const double budget = std::max(headway - jam_distance, 0.0);
  const double v = -reaction + std::sqrt(reaction * reaction + lead_velocity * lead_velocity + 2.0 * b * budget);
  return std::clamp(v, 0.0, limits.v_max);
}

double step_velocity_idm(double velocity, double accel, const SimLimits& limits, double speed_cap) {
  return std::max(std::min(velocity + accel * limits.dt, std::min(limits.v_max, speed_cap)), 0.0);
}

double step_velocity_av(double velocity, double action_accel, const SimLimits& limits) {
  return std::max(std::min(velocity + action_accel * limits.dt, limits.v_max), 0.0);
}

}  // namespace rampmeter
