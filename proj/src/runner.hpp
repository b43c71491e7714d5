#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <ostream>
#include <string>
#include <vector>

#include "config.hpp"
#include "transfer_eval.hpp"
#include "trpo_trainer.hpp"

namespace rampmeter {

namespace fs = std::filesystem;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Creates `dir`, refusing to reuse one that already has content.
void prepare_output_dir(const fs::path& dir);

// "# rampmeter <version> seed=<seed>"
std::string file_header(std::uint64_t seed);
std::string fmt(double x);

void write_trajectory_csv(const fs::path& path, const std::vector<TrajectoryRecord>& log, std::uint64_t seed);
std::vector<TrajectoryRecord> read_trajectory_csv(const fs::path& path);
void write_report_csv(const fs::path& path, const std::vector<EvalReport>& reports, std::uint64_t seed);
void write_per_trial_csv(const fs::path& path, const std::vector<EvalReport>& reports, std::uint64_t seed);
void write_reward_curve_csv(const fs::path& path, const std::vector<IterationRecord>& curve, std::uint64_t seed);
void print_report_table(std::ostream& os, const std::vector<EvalReport>& reports, const PerturbationProfile& profile);

// Each command writes effective_config.yaml into `out` before anything else.
TrainResult run_train(const RunConfig& cfg, const fs::path& out, std::ostream& log);
EvalReport run_baseline(const RunConfig& cfg, const fs::path& out, std::ostream& log);
EvalReport run_eval(const RunConfig& cfg, const fs::path& policy, const fs::path& out, std::ostream& log);
std::vector<EvalReport> run_transfer_eval(const RunConfig& cfg, const fs::path& policy_noise_trained,
                                          const std::optional<fs::path>& policy_noise_free, const fs::path& out,
                                          std::ostream& log);
// Space-time and velocity-profile tables for each trajectory log.
void run_export_plots(const RunConfig& cfg, const std::vector<fs::path>& trajectories, const fs::path& out,
                      std::ostream& log);

}  // namespace rampmeter
