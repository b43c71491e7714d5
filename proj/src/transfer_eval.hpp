#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "policy_net.hpp"
#include "rl_env.hpp"

namespace rampmeter {

enum class EvalCase { Baseline, RlNoiseFree, RlNoiseTrained };
const char* case_name(EvalCase c);

// Mismatch between the training simulator and the deployment target.
struct PerturbationProfile {
  int actuation_delay_steps = 2;
  double speed_tracking_time_constant = 1.5;  // 0 disables the lag
  int observation_delay_steps = 1;
  double geometry_scale_error = 0.05;
  double sensor_dropout_prob = 0.05;
  double yield_gap = 12.0;  // 0 disables the north-entry yield rule

  void validate() const;
  static PerturbationProfile zero();
  bool is_zero() const;
};

enum class YieldDecision { Proceed, Stop };

// Only vehicles waiting on the north entry are ever told to stop.
YieldDecision yield_controller(const VehicleState& vehicle, const World& world, double yield_gap);

// Fixed-length FIFO: push returns the element issued `delay` calls earlier,
// or `fill` while the buffer is warming up.
template <class T>
class DelayLine {
 public:
  DelayLine(int delay, T fill) : delay_(delay), fill_(fill) {}
  T push(const T& x) {
    if (delay_ == 0) return x;
    buf_.push_back(x);
    if (static_cast<int>(buf_.size()) <= delay_) return fill_;
    T out = buf_.front();
    buf_.pop_front();
    return out;
  }
  void reset(T fill) {
    buf_.clear();
    fill_ = fill;
  }

 private:
  int delay_;
  T fill_;
  std::deque<T> buf_;
};

// Replaces each non-AV slot (entry and ring vehicles) by padding with
// probability `p`.
void apply_sensor_dropout(Observation& o, double p, Rng& rng);

// World stepped under a perturbation profile. The policy acts through
// act(); the delayed action is what reaches the vehicles.
class PerturbedWorld {
 public:
  PerturbedWorld(const EnvConfig& env, const PerturbationProfile& profile, std::uint64_t seed);

  // Observation currently served to the policy (delayed, with dropout).
  const Observation& observation() const { return served_; }
  // Applies one policy output (or none for all-IDM) and advances one step.
  std::vector<CollisionEvent> step(const std::optional<Action>& policy_output);

  const World& world() const { return world_; }
  double geometry_factor() const { return geometry_factor_; }

 private:
  Observation sense();

  EnvConfig env_;
  PerturbationProfile profile_;
  Rng rng_;  // perturbation draws
  double geometry_factor_ = 1.0;
  World world_;
  RlQueue queues_;
  DelayLine<Action> action_delay_;
  DelayLine<Observation> obs_delay_;
  Observation served_{};
};

struct TrialResult {
  std::uint64_t seed = 0;
  double geometry_factor = 1.0;
  double avg_velocity = 0.0;
  double avg_travel_time = 0.0;
  double max_travel_time = 0.0;
  std::vector<double> travel_times;
  int collisions = 0;
  int steps = 0;
  double metering_score = 0.0;
  std::vector<TrajectoryRecord> trajectory;
};

struct EvalReport {
  EvalCase eval_case = EvalCase::Baseline;
  double avg_velocity = 0.0;
  double avg_travel_time = 0.0;
  double max_travel_time = 0.0;  // mean over trials of the per-trial maximum
  int collision_count = 0;
  int trials = 0;
  double metering_score = 0.0;
  bool collision_storm = false;  // collisions in more than half the trials
  std::vector<TrialResult> per_trial;
};

struct EvalOptions {
  bool sample_actions = false;  // default uses the distribution mean
  bool keep_trajectories = true;
};

// Seed of the world in trial `k`.
std::uint64_t trial_seed(std::uint64_t master_seed, int trial);

// One platoon wave from a standing start, run until every vehicle has left
// the network or the horizon elapses. Noise injection is disabled.
TrialResult run_trial(const EnvConfig& env, const PolicyParameters* policy, const PerturbationProfile& profile,
                      std::uint64_t seed, const EvalOptions& opts = {});

EvalReport evaluate(EvalCase c, const EnvConfig& env, const PolicyParameters* policy,
                    const PerturbationProfile& profile, int trials, std::uint64_t seed, const EvalOptions& opts = {});

// Total time during which a north and a west vehicle are both inside the
// conflict window around the merge point with a bumper gap under 2*s0.
double metering_score(const std::vector<TrajectoryRecord>& log, const RoadNetwork& net, double jam_distance,
                      double vehicle_length = 5.0, double dt = 1.0, double window = 20.0);

}  // namespace rampmeter
