#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "rl_env.hpp"
#include "transfer_eval.hpp"
#include "trpo_trainer.hpp"

namespace rampmeter {

inline constexpr const char* kVersion = "0.1.0";

// Everything a run depends on. Serialized as nested YAML mappings; see
// dump_config() for the full key list.
struct RunConfig {
  GeometrySpec geometry;
  SimConfig sim;
  NormalizationScales scales;
  NoiseConfig noise;
  RewardConfig reward;
  TrainConfig train;
  PerturbationProfile perturbation;
  int eval_trials = 3;
  bool eval_sample_actions = false;
  int checkpoint_every = 1;  // 0: final policy only
  std::string output_dir = "out";
  std::uint64_t master_seed = 0;

  void validate() const;
  // Environment for training and evaluation; the network is built here.
  EnvConfig env() const;
  TrainConfig train_config() const;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing keys keep their defaults; unknown keys and ill-typed values throw
// ConfigError, out-of-range values std::invalid_argument.
RunConfig parse_config(const std::string& yaml_text);
RunConfig load_config(const std::filesystem::path& path);
std::string dump_config(const RunConfig& cfg);

// Sets one dotted key, e.g. ("train.horizon", "50"). Does not validate.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
// Value of one dotted key, formatted as in the dump.
std::string get_config_value(const RunConfig& cfg, const std::string& key);

}  // namespace rampmeter
