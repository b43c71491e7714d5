#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "policy_net.hpp"
#include "rl_env.hpp"

namespace rampmeter {

struct TrainConfig {
  double discount = 0.999;
  double kl_limit = 0.01;
  int batch_size = 20000;
  int horizon = 500;
  int iterations = 100;
  int cg_iters = 10;
  double cg_damping = 0.1;
  double backtrack_ratio = 0.8;
  int max_backtracks = 10;
  double baseline_ridge = 1e-5;
  int workers = 1;
  std::uint64_t master_seed = 0;

  void validate() const;
};

struct TrajectoryBatch {
  std::vector<Episode> episodes;
  std::size_t total_steps = 0;
};

// Seed of episode `episode` within training iteration `iteration`.
std::uint64_t episode_seed(std::uint64_t master_seed, std::uint64_t iteration, std::uint64_t episode);

// Runs episodes in index order until at least cfg.batch_size steps are collected.
// The result does not depend on cfg.workers.
TrajectoryBatch collect_batch(const PolicyParameters& policy, const EnvConfig& env, const TrainConfig& cfg,
                              int iteration);

std::vector<double> discounted_returns(const std::vector<double>& rewards, double gamma);

// Linear value baseline over (obs, obs^2, t/T, (t/T)^2, (t/T)^3, 1).
class LinearBaseline {
 public:
  LinearBaseline(int horizon, double ridge) : horizon_(horizon), ridge_(ridge) {}
  void fit(const TrajectoryBatch& batch, const Eigen::VectorXd& returns);
  std::vector<double> predict(const Episode& ep) const;
  bool fitted() const { return coef_.size() > 0; }
  const Eigen::VectorXd& coefficients() const { return coef_; }
  static Eigen::VectorXd features(const Observation& o, std::size_t t, int horizon);

 private:
  int horizon_;
  double ridge_;
  Eigen::VectorXd coef_;
};

struct Advantages {
  Eigen::VectorXd returns;     // per step, batch order
  Eigen::VectorXd advantages;  // normalized to zero mean, unit variance
};

Advantages compute_advantages(const TrajectoryBatch& batch, const LinearBaseline& baseline, double gamma,
                              bool normalize = true);

// Batch arranged for vectorized policy evaluation.
struct SampleMatrix {
  Eigen::MatrixXd obs;      // in x N
  Eigen::MatrixXd actions;  // out x N
  static SampleMatrix from(const TrajectoryBatch& batch);
};

struct SurrogateKl {
  double surrogate = 0.0;
  double mean_kl = 0.0;
};

SurrogateKl surrogate_and_kl(const PolicyParameters& params_new, const PolicyParameters& params_old,
                             const SampleMatrix& samples, const Eigen::VectorXd& advantages);
SurrogateKl surrogate_and_kl(const PolicyParameters& params_new, const PolicyParameters& params_old,
                             const TrajectoryBatch& batch, const Eigen::VectorXd& advantages);

// Gradient of the surrogate at params_new == params_old.
Eigen::VectorXd surrogate_gradient(const PolicyParameters& p, const SampleMatrix& samples,
                                   const Eigen::VectorXd& advantages);

// Fisher information of the action distribution, averaged over the batch
// observations, applied to v (no damping).
class FisherOperator {
 public:
  FisherOperator(const PolicyParameters& p, const Eigen::MatrixXd& obs);
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const;

 private:
  const PolicyParameters& p_;
  ForwardCache cache_;
  Eigen::VectorXd inv_var_;
};

// Gradient with respect to params_new of the mean KL(old || new).
Eigen::VectorXd kl_gradient(const PolicyParameters& params_new, const PolicyParameters& params_old,
                            const Eigen::MatrixXd& obs);

// Solves A x = b for symmetric positive-definite A given as a product.
Eigen::VectorXd conjugate_gradient(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& apply,
                                   const Eigen::VectorXd& b, int iters, double residual_tol = 1e-10);

struct StepStats {
  bool accepted = false;
  bool cg_fallback = false;
  int backtracks = 0;
  double mean_kl = 0.0;
  double surrogate_gain = 0.0;
};

PolicyParameters trpo_step(const PolicyParameters& params_old, const TrajectoryBatch& batch,
                           const Eigen::VectorXd& advantages, const TrainConfig& cfg, StepStats* stats = nullptr);

struct IterationRecord {
  int iteration = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double mean_kl = 0.0;
  std::size_t steps = 0;
  std::size_t episodes = 0;
  int collisions = 0;
  bool accepted = false;
};

struct TrainResult {
  PolicyParameters params;
  std::vector<IterationRecord> curve;
};

using IterationCallback = std::function<void(const IterationRecord&, const PolicyParameters&)>;

// Initial parameters are Glorot-initialized from the master seed unless given.
PolicyParameters initial_policy(std::uint64_t master_seed);
TrainResult train(const EnvConfig& env, const TrainConfig& cfg, const IterationCallback& on_iteration = {},
                  const PolicyParameters* init = nullptr);

}  // namespace rampmeter
