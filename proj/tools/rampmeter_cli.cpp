// Command-line front end. Talks to the library through the C interface only.
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rampmeter/rampmeter.h"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string policy;
  std::string policy_noise_free;
  std::optional<int> trials;
  std::string noise;
  std::vector<std::string> trajectories;
  std::vector<std::string> overrides;
};

int report(rm_status s) {
  std::fprintf(stderr, "error: %s: %s\n", rm_status_string(s), rm_last_error());
  return static_cast<int>(s);
}

std::string config_value(const rm_config* cfg, const char* key) {
  size_t needed = 0;
  if (rm_config_get(cfg, key, nullptr, 0, &needed) != RM_OK) return {};
  std::string s(needed, '\0');
  rm_config_get(cfg, key, s.data(), s.size(), &needed);
  s.resize(needed - 1);
  return s;
}

int run(const std::string& command, const Options& o) {
  rm_config* cfg = nullptr;
  rm_status s = o.config.empty() ? rm_config_default(&cfg) : rm_config_load(o.config.c_str(), &cfg);
  if (s != RM_OK) return report(s);
  auto done = [&](rm_status st) {
    rm_config_free(cfg);
    return st == RM_OK ? 0 : report(st);
  };

  if (o.seed) rm_config_set_seed(cfg, *o.seed);
  if (o.trials && (s = rm_config_set(cfg, "eval.trials", std::to_string(*o.trials).c_str())) != RM_OK) return done(s);
  if (!o.noise.empty() && (s = rm_config_set(cfg, "noise.enabled", o.noise == "on" ? "true" : "false")) != RM_OK)
    return done(s);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
      rm_config_free(cfg);
      return 2;
    }
    if ((s = rm_config_set(cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str())) != RM_OK) return done(s);
  }
  if ((s = rm_config_validate(cfg)) != RM_OK) return done(s);

  const std::string out = o.out.empty() ? config_value(cfg, "output_dir") : o.out;
  if (command == "train") return done(rm_train(cfg, out.c_str(), nullptr));
  if (command == "baseline") return done(rm_baseline(cfg, out.c_str(), nullptr));
  if (command == "eval") return done(rm_eval(cfg, o.policy.c_str(), out.c_str(), nullptr));
  if (command == "transfer-eval") {
    const char* free = o.policy_noise_free.empty() ? nullptr : o.policy_noise_free.c_str();
    return done(rm_transfer_eval(cfg, o.policy.c_str(), free, out.c_str(), nullptr, nullptr));
  }
  std::vector<const char*> paths;
  for (const auto& t : o.trajectories) paths.push_back(t.c_str());
  return done(rm_export_plots(cfg, paths.data(), paths.size(), out.c_str()));
}

void print_line(const char* line, void*) {
  std::puts(line);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Roundabout ramp-metering simulator and policy trainer"};
  app.set_version_flag("--version", std::string(rm_version()));
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "YAML run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "master seed (overrides the config)");
    sub->add_option("--out", o.out, "output directory; must not exist or be empty");
    sub->add_option("--set", o.overrides, "override a config key, e.g. --set train.horizon=50");
  };

  auto* train = app.add_subcommand("train", "train a policy with TRPO");
  common(train);
  train->add_option("--noise", o.noise, "state and action noise during training")->check(CLI::IsMember({"on", "off"}));

  auto* baseline = app.add_subcommand("baseline", "all-IDM run on the nominal network");
  common(baseline);
  baseline->add_option("--trials", o.trials, "number of trials")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "evaluate a policy on the nominal network");
  common(eval);
  eval->add_option("--policy", o.policy, "policy weight file")->required();
  eval->add_option("--trials", o.trials, "number of trials")->check(CLI::PositiveNumber);
  eval->add_option("--noise", o.noise, "training regime of the policy (labels the report row)")
      ->check(CLI::IsMember({"on", "off"}));

  auto* transfer = app.add_subcommand("transfer-eval", "baseline and policies under perturbed dynamics");
  common(transfer);
  transfer->add_option("--policy", o.policy, "policy trained with noise")->required();
  transfer->add_option("--policy-noise-free", o.policy_noise_free, "policy trained without noise");
  transfer->add_option("--trials", o.trials, "number of trials")->check(CLI::PositiveNumber);

  auto* plots = app.add_subcommand("export-plots", "space-time and velocity-profile tables from trajectory logs");
  common(plots);
  plots->add_option("--trajectory", o.trajectories, "trajectory CSV (repeatable)")->required();

  CLI11_PARSE(app, argc, argv);
  rm_set_log_callback(print_line, nullptr);
  return run(app.get_subcommands().front()->get_name(), o);
}
