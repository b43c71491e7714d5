#include "rampmeter/rampmeter.h"

#include <cstring>
#include <filesystem>
#include <mutex>
#include <optional>
#include <ostream>
#include <streambuf>
#include <string>

#include "config.hpp"
#include "runner.hpp"

struct rm_config {
  rampmeter::RunConfig cfg;
};

struct rm_policy {
  rampmeter::PolicyParameters params;
};

struct rm_env {
  rampmeter::RoundaboutEnv env;
};

namespace {

thread_local std::string g_error;

std::mutex g_log_mutex;
rm_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

// Forwards complete lines to the registered callback.
class LineBuf : public std::streambuf {
 protected:
  int overflow(int c) override {
    if (c == traits_type::eof()) return 0;
    if (c == '\n') {
      flush_line();
    } else {
      line_.push_back(static_cast<char>(c));
    }
    return c;
  }
  int sync() override {
    if (!line_.empty()) flush_line();
    return 0;
  }

 private:
  void flush_line() {
    std::lock_guard<std::mutex> lock(g_log_mutex);
    if (g_log_fn) g_log_fn(line_.c_str(), g_log_user);
    line_.clear();
  }
  std::string line_;
};

rm_status fail(rm_status s, const std::string& msg) {
  g_error = msg;
  return s;
}

template <class F>
rm_status guarded(F&& f) {
  try {
    f();
    g_error.clear();
    return RM_OK;
  } catch (const rampmeter::ConfigError& e) {
    return fail(RM_ERR_CONFIG, e.what());
  } catch (const rampmeter::PolicyFormatError& e) {
    return fail(e.kind() == rampmeter::PolicyFormatError::Kind::Io ? RM_ERR_IO : RM_ERR_POLICY_FORMAT, e.what());
  } catch (const rampmeter::IoError& e) {
    return fail(RM_ERR_IO, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(RM_ERR_IO, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(RM_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::domain_error& e) {
    return fail(RM_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::logic_error& e) {
    return fail(RM_ERR_STATE, e.what());
  } catch (const std::exception& e) {
    return fail(RM_ERR_RUNTIME, e.what());
  } catch (...) {
    return fail(RM_ERR_INTERNAL, "unknown error");
  }
}

#define RM_REQUIRE(cond, msg) \
  if (!(cond)) return fail(RM_ERR_INVALID_ARGUMENT, msg)

rm_case to_c(rampmeter::EvalCase c) {
  switch (c) {
    case rampmeter::EvalCase::Baseline: return RM_CASE_BASELINE;
    case rampmeter::EvalCase::RlNoiseFree: return RM_CASE_RL_NOISE_FREE;
    case rampmeter::EvalCase::RlNoiseTrained: return RM_CASE_RL_NOISE_TRAINED;
  }
  return RM_CASE_BASELINE;
}

void fill_row(const rampmeter::EvalReport& r, rm_report_row* row) {
  if (!row) return;
  row->eval_case = to_c(r.eval_case);
  row->avg_velocity = r.avg_velocity;
  row->avg_travel_time = r.avg_travel_time;
  row->max_travel_time = r.max_travel_time;
  row->collisions = r.collision_count;
  row->trials = r.trials;
  row->metering_score = r.metering_score;
  row->collision_storm = r.collision_storm ? 1 : 0;
}

}  // namespace

extern "C" {

const char* rm_version(void) { return rampmeter::kVersion; }

const char* rm_last_error(void) { return g_error.c_str(); }

const char* rm_status_string(rm_status s) {
  switch (s) {
    case RM_OK: return "ok";
    case RM_ERR_INVALID_ARGUMENT: return "invalid argument";
    case RM_ERR_CONFIG: return "configuration error";
    case RM_ERR_IO: return "i/o error";
    case RM_ERR_POLICY_FORMAT: return "malformed policy file";
    case RM_ERR_RUNTIME: return "runtime error";
    case RM_ERR_STATE: return "invalid state";
    case RM_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* rm_case_name(rm_case c) {
  switch (c) {
    case RM_CASE_BASELINE: return rampmeter::case_name(rampmeter::EvalCase::Baseline);
    case RM_CASE_RL_NOISE_FREE: return rampmeter::case_name(rampmeter::EvalCase::RlNoiseFree);
    case RM_CASE_RL_NOISE_TRAINED: return rampmeter::case_name(rampmeter::EvalCase::RlNoiseTrained);
  }
  return "?";
}

size_t rm_observation_dim(void) { return rampmeter::kObsDim; }
size_t rm_action_dim(void) { return rampmeter::kActionDim; }

void rm_set_log_callback(rm_log_fn fn, void* user) {
  std::lock_guard<std::mutex> lock(g_log_mutex);
  g_log_fn = fn;
  g_log_user = user;
}

rm_status rm_config_default(rm_config** out) {
  RM_REQUIRE(out, "out is null");
  return guarded([&] { *out = new rm_config{}; });
}

rm_status rm_config_load(const char* path, rm_config** out) {
  RM_REQUIRE(path && out, "path and out must be non-null");
  *out = nullptr;
  return guarded([&] {
    try {
      *out = new rm_config{rampmeter::load_config(path)};
    } catch (const std::invalid_argument& e) {
      throw rampmeter::ConfigError(e.what());
    }
  });
}

rm_status rm_config_set(rm_config* cfg, const char* key, const char* value) {
  RM_REQUIRE(cfg && key && value, "cfg, key and value must be non-null");
  return guarded([&] { rampmeter::set_config_value(cfg->cfg, key, value); });
}

rm_status rm_config_get(const rm_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  RM_REQUIRE(cfg && key, "cfg and key must be non-null");
  return guarded([&] {
    const std::string s = rampmeter::get_config_value(cfg->cfg, key);
    if (needed) *needed = s.size() + 1;
    if (buf && cap > s.size()) std::memcpy(buf, s.c_str(), s.size() + 1);
  });
}

rm_status rm_config_set_seed(rm_config* cfg, uint64_t seed) {
  RM_REQUIRE(cfg, "cfg is null");
  cfg->cfg.master_seed = seed;
  return RM_OK;
}

rm_status rm_config_get_seed(const rm_config* cfg, uint64_t* seed) {
  RM_REQUIRE(cfg && seed, "cfg and seed must be non-null");
  *seed = cfg->cfg.master_seed;
  return RM_OK;
}

rm_status rm_config_validate(const rm_config* cfg) {
  RM_REQUIRE(cfg, "cfg is null");
  return guarded([&] {
    try {
      cfg->cfg.validate();
    } catch (const std::invalid_argument& e) {
      throw rampmeter::ConfigError(e.what());
    }
  });
}

rm_status rm_config_dump(const rm_config* cfg, char* buf, size_t cap, size_t* needed) {
  RM_REQUIRE(cfg, "cfg is null");
  return guarded([&] {
    const std::string s = rampmeter::dump_config(cfg->cfg);
    if (needed) *needed = s.size() + 1;
    if (buf && cap > s.size()) std::memcpy(buf, s.c_str(), s.size() + 1);
  });
}

void rm_config_free(rm_config* cfg) { delete cfg; }

rm_status rm_train(const rm_config* cfg, const char* out_dir, rm_policy** trained) {
  RM_REQUIRE(cfg && out_dir, "cfg and out_dir must be non-null");
  if (trained) *trained = nullptr;
  return guarded([&] {
    LineBuf buf;
    std::ostream log(&buf);
    auto res = rampmeter::run_train(cfg->cfg, out_dir, log);
    log.flush();
    if (trained) *trained = new rm_policy{std::move(res.params)};
  });
}

rm_status rm_baseline(const rm_config* cfg, const char* out_dir, rm_report_row* row) {
  RM_REQUIRE(cfg && out_dir, "cfg and out_dir must be non-null");
  return guarded([&] {
    LineBuf buf;
    std::ostream log(&buf);
    fill_row(rampmeter::run_baseline(cfg->cfg, out_dir, log), row);
    log.flush();
  });
}

rm_status rm_eval(const rm_config* cfg, const char* policy_path, const char* out_dir, rm_report_row* row) {
  RM_REQUIRE(cfg && policy_path && out_dir, "cfg, policy_path and out_dir must be non-null");
  return guarded([&] {
    LineBuf buf;
    std::ostream log(&buf);
    fill_row(rampmeter::run_eval(cfg->cfg, policy_path, out_dir, log), row);
    log.flush();
  });
}

rm_status rm_transfer_eval(const rm_config* cfg, const char* policy_noise_trained, const char* policy_noise_free,
                           const char* out_dir, rm_report_row* rows, size_t* n_rows) {
  RM_REQUIRE(cfg && policy_noise_trained && out_dir, "cfg, policy_noise_trained and out_dir must be non-null");
  return guarded([&] {
    LineBuf buf;
    std::ostream log(&buf);
    std::optional<std::filesystem::path> free;
    if (policy_noise_free) free = policy_noise_free;
    auto reports = rampmeter::run_transfer_eval(cfg->cfg, policy_noise_trained, free, out_dir, log);
    log.flush();
    if (n_rows) *n_rows = reports.size();
    if (rows)
      for (std::size_t i = 0; i < reports.size(); ++i) fill_row(reports[i], rows + i);
  });
}

rm_status rm_export_plots(const rm_config* cfg, const char* const* trajectory_paths, size_t n_paths,
                          const char* out_dir) {
  RM_REQUIRE(cfg && out_dir && (trajectory_paths || n_paths == 0), "cfg, trajectory_paths and out_dir must be non-null");
  return guarded([&] {
    std::vector<std::filesystem::path> paths;
    for (size_t i = 0; i < n_paths; ++i) {
      if (!trajectory_paths[i]) throw std::invalid_argument("trajectory path is null");
      paths.emplace_back(trajectory_paths[i]);
    }
    LineBuf buf;
    std::ostream log(&buf);
    rampmeter::run_export_plots(cfg->cfg, paths, out_dir, log);
    log.flush();
  });
}

rm_status rm_policy_create(uint64_t seed, rm_policy** out) {
  RM_REQUIRE(out, "out is null");
  return guarded([&] { *out = new rm_policy{rampmeter::initial_policy(seed)}; });
}

rm_status rm_policy_load(const char* path, rm_policy** out) {
  RM_REQUIRE(path && out, "path and out must be non-null");
  *out = nullptr;
  return guarded([&] { *out = new rm_policy{rampmeter::load_policy(path)}; });
}

rm_status rm_policy_save(const rm_policy* p, const char* path) {
  RM_REQUIRE(p && path, "policy and path must be non-null");
  return guarded([&] { rampmeter::save_policy(p->params, path); });
}

rm_status rm_policy_num_params(const rm_policy* p, size_t* n) {
  RM_REQUIRE(p && n, "policy and n must be non-null");
  *n = p->params.size();
  return RM_OK;
}

rm_status rm_policy_forward(const rm_policy* p, const double* obs, size_t obs_len, double* mean_out,
                            double* std_out, size_t action_len) {
  RM_REQUIRE(p && obs && mean_out, "policy, obs and mean_out must be non-null");
  RM_REQUIRE(obs_len == static_cast<size_t>(p->params.input_dim()), "obs_len does not match the policy input");
  RM_REQUIRE(action_len == static_cast<size_t>(p->params.output_dim()), "action_len does not match the policy output");
  return guarded([&] {
    auto d = rampmeter::forward(p->params, std::span<const double>(obs, obs_len));
    for (size_t k = 0; k < action_len; ++k) {
      mean_out[k] = d.mean[static_cast<Eigen::Index>(k)];
      if (std_out) std_out[k] = d.std[static_cast<Eigen::Index>(k)];
    }
  });
}

void rm_policy_free(rm_policy* p) { delete p; }

rm_status rm_env_create(const rm_config* cfg, uint64_t seed, rm_env** out) {
  RM_REQUIRE(cfg && out, "cfg and out must be non-null");
  *out = nullptr;
  return guarded([&] {
    cfg->cfg.validate();
    *out = new rm_env{rampmeter::RoundaboutEnv(cfg->cfg.env(), seed)};
  });
}

rm_status rm_env_reset(rm_env* env, double* obs_out, size_t obs_len) {
  RM_REQUIRE(env && obs_out, "env and obs_out must be non-null");
  RM_REQUIRE(obs_len == rampmeter::kObsDim, "obs_len must equal rm_observation_dim()");
  return guarded([&] {
    const auto o = env->env.reset();
    std::memcpy(obs_out, o.data(), sizeof(double) * o.size());
  });
}

rm_status rm_env_step(rm_env* env, const double* action, size_t action_len, double* obs_out, size_t obs_len,
                      double* reward, int* done) {
  RM_REQUIRE(env && action, "env and action must be non-null");
  RM_REQUIRE(action_len == rampmeter::kActionDim, "action_len must equal rm_action_dim()");
  RM_REQUIRE(!obs_out || obs_len == rampmeter::kObsDim, "obs_len must equal rm_observation_dim()");
  return guarded([&] {
    rampmeter::Action a{};
    std::memcpy(a.data(), action, sizeof(double) * a.size());
    auto res = env->env.step(a);
    if (obs_out) std::memcpy(obs_out, res.observation.data(), sizeof(double) * res.observation.size());
    if (reward) *reward = res.reward;
    if (done) *done = res.done ? 1 : 0;
  });
}

void rm_env_free(rm_env* env) { delete env; }

}  // extern "C"
