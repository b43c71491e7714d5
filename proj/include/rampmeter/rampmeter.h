/* C interface to the rampmeter library.
 *
 * All functions return an rm_status; on failure rm_last_error() holds a
 * message for the calling thread. Handles are opaque and owned by the
 * caller, who releases them with the matching *_free function. */
#ifndef RAMPMETER_H
#define RAMPMETER_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define RM_API __attribute__((visibility("default")))
#else
#define RM_API
#endif

typedef enum rm_status {
  RM_OK = 0,
  RM_ERR_INVALID_ARGUMENT = 1,
  RM_ERR_CONFIG = 2,
  RM_ERR_IO = 3,
  RM_ERR_POLICY_FORMAT = 4,
  RM_ERR_RUNTIME = 5,
  RM_ERR_STATE = 6,
  RM_ERR_INTERNAL = 7
} rm_status;

typedef enum rm_case { RM_CASE_BASELINE = 0, RM_CASE_RL_NOISE_FREE = 1, RM_CASE_RL_NOISE_TRAINED = 2 } rm_case;

typedef struct rm_config rm_config;
typedef struct rm_policy rm_policy;
typedef struct rm_env rm_env;

/* One row of an evaluation report; times in seconds, velocity in m/s. */
typedef struct rm_report_row {
  rm_case eval_case;
  double avg_velocity;
  double avg_travel_time;
  double max_travel_time;
  int collisions;
  int trials;
  double metering_score;
  int collision_storm;
} rm_report_row;

RM_API const char* rm_version(void);
RM_API const char* rm_last_error(void);
RM_API const char* rm_status_string(rm_status s);
RM_API const char* rm_case_name(rm_case c);
RM_API size_t rm_observation_dim(void);
RM_API size_t rm_action_dim(void);

/* Progress lines from long-running commands; NULL silences them. */
typedef void (*rm_log_fn)(const char* line, void* user);
RM_API void rm_set_log_callback(rm_log_fn fn, void* user);

/* Configuration */
RM_API rm_status rm_config_default(rm_config** out);
RM_API rm_status rm_config_load(const char* path, rm_config** out);
/* Dotted key and YAML scalar value, e.g. ("train.horizon", "50"). */
RM_API rm_status rm_config_set(rm_config* cfg, const char* key, const char* value);
/* Current value of a key as text; same buffer protocol as rm_config_dump. */
RM_API rm_status rm_config_get(const rm_config* cfg, const char* key, char* buf, size_t cap, size_t* needed);
RM_API rm_status rm_config_set_seed(rm_config* cfg, uint64_t seed);
RM_API rm_status rm_config_get_seed(const rm_config* cfg, uint64_t* seed);
RM_API rm_status rm_config_validate(const rm_config* cfg);
/* Writes the effective YAML into buf (NUL-terminated when it fits) and the
 * required size including the terminator into *needed. */
RM_API rm_status rm_config_dump(const rm_config* cfg, char* buf, size_t cap, size_t* needed);
RM_API void rm_config_free(rm_config* cfg);

/* Commands. Each creates out_dir, which must not exist or be empty. */
RM_API rm_status rm_train(const rm_config* cfg, const char* out_dir, rm_policy** trained /* nullable */);
RM_API rm_status rm_baseline(const rm_config* cfg, const char* out_dir, rm_report_row* row /* nullable */);
RM_API rm_status rm_eval(const rm_config* cfg, const char* policy_path, const char* out_dir,
                         rm_report_row* row /* nullable */);
/* rows must hold 3 entries; *n_rows receives 2 when no noise-free policy is given. */
RM_API rm_status rm_transfer_eval(const rm_config* cfg, const char* policy_noise_trained,
                                  const char* policy_noise_free /* nullable */, const char* out_dir,
                                  rm_report_row* rows /* nullable */, size_t* n_rows /* nullable */);
RM_API rm_status rm_export_plots(const rm_config* cfg, const char* const* trajectory_paths, size_t n_paths,
                                 const char* out_dir);

/* Policies */
RM_API rm_status rm_policy_create(uint64_t seed, rm_policy** out);
RM_API rm_status rm_policy_load(const char* path, rm_policy** out);
RM_API rm_status rm_policy_save(const rm_policy* p, const char* path);
RM_API rm_status rm_policy_num_params(const rm_policy* p, size_t* n);
/* Mean and standard deviation of the action distribution; std_out may be NULL. */
RM_API rm_status rm_policy_forward(const rm_policy* p, const double* obs, size_t obs_len, double* mean_out,
                                   double* std_out, size_t action_len);
RM_API void rm_policy_free(rm_policy* p);

/* Step-level environment */
RM_API rm_status rm_env_create(const rm_config* cfg, uint64_t seed, rm_env** out);
RM_API rm_status rm_env_reset(rm_env* env, double* obs_out, size_t obs_len);
RM_API rm_status rm_env_step(rm_env* env, const double* action, size_t action_len, double* obs_out, size_t obs_len,
                             double* reward, int* done);
RM_API void rm_env_free(rm_env* env);

#ifdef __cplusplus
}
#endif

#endif
