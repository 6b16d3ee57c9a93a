#ifndef VLMLIGHT_VLMLIGHT_H
#define VLMLIGHT_VLMLIGHT_H

/* C interface to the VLMLight traffic signal control library.
 *
 * Every handle is opaque and owned by the caller once returned; release it
 * with the matching *_free function (NULL is accepted). Functions that can
 * fail return a vlm_status; on failure vlm_last_error() holds a message for
 * the calling thread. Strings returned through char** are heap allocated and
 * released with vlm_string_free. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define VLM_API __declspec(dllexport)
#else
#define VLM_API __attribute__((visibility("default")))
#endif

typedef enum vlm_status {
  VLM_OK = 0,
  VLM_ERR_INVALID_ARGUMENT = 1,
  VLM_ERR_PARSE = 2,
  VLM_ERR_CONFIG = 3,
  VLM_ERR_IO = 4,
  VLM_ERR_BACKEND = 5,
  VLM_ERR_NUMERIC = 6,
  VLM_ERR_INTERNAL = 7
} vlm_status;

VLM_API const char* vlm_version(void);
/* Message of the last failure on this thread; "" when none. */
VLM_API const char* vlm_last_error(void);
VLM_API const char* vlm_status_name(vlm_status status);
VLM_API void vlm_string_free(char* s);

/* ---- scenarios ---- */

typedef struct vlm_scenario vlm_scenario;

/* A built-in name (songdo, yaumatei, massy) or a scenario JSON file. */
VLM_API vlm_status vlm_scenario_load(const char* name_or_path, vlm_scenario** out);
VLM_API void vlm_scenario_free(vlm_scenario* scenario);
/* Borrowed pointer, valid while the scenario lives. */
VLM_API const char* vlm_scenario_name(const vlm_scenario* scenario);
VLM_API int vlm_scenario_phase_count(const vlm_scenario* scenario);
/* Newline-separated built-in scenario names. */
VLM_API vlm_status vlm_builtin_scenarios(char** out);

/* ---- RL policy ---- */

typedef struct vlm_policy vlm_policy;

VLM_API vlm_status vlm_policy_load(const char* path, vlm_policy** out);
VLM_API vlm_status vlm_policy_save(const vlm_policy* policy, const char* path);
VLM_API void vlm_policy_free(vlm_policy* policy);

typedef struct vlm_train_stat {
  int update;
  long steps;
  double mean_reward;
  double policy_loss;
  double value_loss;
  double lr;
} vlm_train_stat;

typedef void (*vlm_train_callback)(const vlm_train_stat* stat, void* user);

/* PPO training with the default hyperparameters. `curve_csv` (optional)
 * receives the reward curve. */
VLM_API vlm_status vlm_train(const vlm_scenario* scenario, long steps, uint64_t seed, vlm_train_callback progress,
                             void* user, vlm_policy** out, char** curve_csv);

/* ---- controller configuration ---- */

typedef struct vlm_controller vlm_controller;

/* kind: fixtime | webster | maxpressure | rl | vlmlight */
VLM_API vlm_status vlm_controller_create(const char* kind, vlm_controller** out);
VLM_API void vlm_controller_free(vlm_controller* controller);
/* Newline-separated controller kinds. */
VLM_API vlm_status vlm_controller_kinds(char** out);
/* Required for rl; optional fast branch for vlmlight. The policy is copied. */
VLM_API vlm_status vlm_controller_set_policy(vlm_controller* controller, const vlm_policy* policy);
/* kind: scripted | http | invalid. NULL strings keep the values read from
 * LLM_API_BASE, LLM_API_KEY and LLM_MODEL. timeout_s <= 0 keeps 30 s. */
VLM_API vlm_status vlm_controller_set_backend(vlm_controller* controller, const char* kind, const char* endpoint,
                                              const char* model, const char* api_key, double timeout_s);
VLM_API vlm_status vlm_controller_set_ablation(vlm_controller* controller, int disable_phase, int disable_check);
VLM_API vlm_status vlm_controller_set_n_check(vlm_controller* controller, int n_check);
/* Directory holding <role>.txt prompt templates; NULL restores the built-ins. */
VLM_API vlm_status vlm_controller_set_template_dir(vlm_controller* controller, const char* dir);
/* Label used in reports, e.g. "vlmlight-no-phase". Borrowed pointer. */
VLM_API const char* vlm_controller_label(const vlm_controller* controller);

/* ---- episodes ---- */

typedef struct vlm_episode_options {
  double t_max;
  double delta_t;
  double dt;
  double warmup;
  int log_events;
  int check_invariants;
} vlm_episode_options;

VLM_API vlm_episode_options vlm_episode_options_default(void);

typedef struct vlm_metrics {
  double att, awt, aett, aewt;
  int has_att, has_awt, has_aett, has_aewt; /* 0 when the population is empty */
  int completed;
  int emergency_completed;
  int incomplete;
} vlm_metrics;

typedef struct vlm_episode vlm_episode;

VLM_API vlm_status vlm_episode_run(const vlm_scenario* scenario, const vlm_controller* controller, uint64_t seed,
                                   const vlm_episode_options* options, vlm_episode** out);
VLM_API void vlm_episode_free(vlm_episode* episode);
VLM_API vlm_status vlm_episode_metrics(const vlm_episode* episode, vlm_metrics* out);
/* Metrics recomputed from the event log (needs log_events). */
VLM_API vlm_status vlm_episode_event_metrics(const vlm_episode* episode, vlm_metrics* out);
/* Summary document: scenario, controller, seed, metrics, signal history,
 * violations and decision traces. */
VLM_API vlm_status vlm_episode_json(const vlm_episode* episode, char** out);
/* Newline-delimited JSON. */
VLM_API vlm_status vlm_episode_traces(const vlm_episode* episode, char** out);
VLM_API vlm_status vlm_episode_events(const vlm_episode* episode, char** out);
VLM_API size_t vlm_episode_violation_count(const vlm_episode* episode);
/* SVG of the final state. */
VLM_API vlm_status vlm_episode_snapshot(const vlm_episode* episode, char** out);

/* ---- experiments ---- */

typedef struct vlm_stat {
  double mean, std;
  int has_mean;
  int std_defined; /* 0 when fewer than two seeds contributed; std is then 0 */
  int n;
} vlm_stat;

typedef struct vlm_summary {
  vlm_stat att, awt, aett, aewt;
  int seeds;
  int incomplete_count;
} vlm_summary;

typedef struct vlm_report vlm_report;

/* One episode per seed on `workers` threads (0 = all cores). */
VLM_API vlm_status vlm_experiment_run(const vlm_scenario* scenario, const vlm_controller* controller,
                                      const uint64_t* seeds, size_t seed_count, const vlm_episode_options* options,
                                      int workers, vlm_report** out);
VLM_API void vlm_report_free(vlm_report* report);
VLM_API vlm_status vlm_report_summary(const vlm_report* report, vlm_summary* out);
/* Per-seed metrics; index < seed count. */
VLM_API vlm_status vlm_report_seed(const vlm_report* report, size_t index, uint64_t* seed, vlm_metrics* out);
/* Table of several reports: format "csv" or "json". */
VLM_API vlm_status vlm_reports_format(const vlm_report* const* reports, size_t count, const char* format, char** out);
VLM_API vlm_status vlm_reports_export(const vlm_report* const* reports, size_t count, const char* path,
                                      const char* format);

/* ---- mock chat endpoint ---- */

typedef struct vlm_mock_server vlm_mock_server;

/* OpenAI-compatible endpoint on 127.0.0.1 that routes every tick to
 * deliberation and answers Plan/Check with `phase`. port 0 picks a free port. */
VLM_API vlm_status vlm_mock_server_start(int port, int phase, vlm_mock_server** out);
/* Borrowed pointer, e.g. "http://127.0.0.1:41234". */
VLM_API const char* vlm_mock_server_url(const vlm_mock_server* server);
VLM_API size_t vlm_mock_server_request_count(const vlm_mock_server* server);
VLM_API void vlm_mock_server_free(vlm_mock_server* server);
/* Serves on the calling thread until the process ends. */
VLM_API vlm_status vlm_mock_server_serve(int port, int phase);

#ifdef __cplusplus
}
#endif

#endif
