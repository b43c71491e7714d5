#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rl_env.hpp"

namespace rampmeter {

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

// Gaussian MLP: tanh hidden layers, linear mean output and a state-independent
// log standard deviation.
struct PolicyParameters {
  std::vector<Layer> layers;
  Eigen::VectorXd log_std;

  // (input, hidden..., output)
  static PolicyParameters zeros(const std::vector<int>& sizes);
  // Uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases, log_std 0.
  static PolicyParameters glorot(const std::vector<int>& sizes, Rng& rng);
  static const std::vector<int>& default_sizes();

  std::vector<int> sizes() const;
  int input_dim() const { return static_cast<int>(layers.front().weight.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().weight.rows()); }
  std::size_t size() const;

  // Flat layout: per layer the row-major weights then the bias, then log_std.
  Eigen::VectorXd flatten() const;
  void assign(const Eigen::Ref<const Eigen::VectorXd>& flat);
  PolicyParameters with(const Eigen::Ref<const Eigen::VectorXd>& flat) const;

  void validate() const;
  bool bit_equal(const PolicyParameters& o) const;
};

struct ActionDistribution {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
};

// Activations kept for backward and forward-mode passes over a batch.
struct ForwardCache {
  Eigen::MatrixXd input;                // in x N
  std::vector<Eigen::MatrixXd> hidden;  // tanh outputs, one per hidden layer
  Eigen::MatrixXd mean;                 // out x N
};

ActionDistribution forward(const PolicyParameters& p, std::span<const double> obs);
ForwardCache forward_batch(const PolicyParameters& p, const Eigen::Ref<const Eigen::MatrixXd>& inputs);

double log_prob(const PolicyParameters& p, std::span<const double> obs, std::span<const double> action);
// Gradient of log_prob with respect to every parameter, in flatten() order.
Eigen::VectorXd grad_log_prob(const PolicyParameters& p, std::span<const double> obs,
                              std::span<const double> action);

// Sum over the batch of dmean(:, i)^T d mean_i / d theta, for the weights and
// biases only (log_std entries are left zero).
Eigen::VectorXd backprop_mean(const PolicyParameters& p, const ForwardCache& cache,
                              const Eigen::Ref<const Eigen::MatrixXd>& dmean);
// Directional derivative of the batch means along the flat direction `v`.
Eigen::MatrixXd mean_jvp(const PolicyParameters& p, const ForwardCache& cache,
                         const Eigen::Ref<const Eigen::VectorXd>& v);

Action sample_action(const PolicyParameters& p, const Observation& obs, Rng& rng);
Action mean_action(const PolicyParameters& p, const Observation& obs);
// Adapters for run_episode.
ActionFn stochastic_policy(const PolicyParameters& p);
ActionFn deterministic_policy(const PolicyParameters& p);

class PolicyFormatError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, BadVersion, Truncated, ShapeMismatch, Checksum, NonFinite, TrailingData };
  PolicyFormatError(Kind k, const std::string& what) : std::runtime_error(what), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Binary weight file: "RNDP", u32 version, u32 layer count, per layer
// (u32 rows, u32 cols, row-major f64 weights, f64 bias), f64 log_std, CRC-32.
// All little-endian.
std::vector<std::uint8_t> encode_policy(const PolicyParameters& p);
PolicyParameters decode_policy(std::span<const std::uint8_t> bytes);
void save_policy(const PolicyParameters& p, const std::filesystem::path& path);
PolicyParameters load_policy(const std::filesystem::path& path);

}  // namespace rampmeter
