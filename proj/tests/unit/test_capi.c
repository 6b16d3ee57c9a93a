/* Exercises the C interface from plain C. */
#include <stdio.h>
#include <string.h>

#include "vlmlight/vlmlight.h"

static int failures = 0;

#define EXPECT(cond)                                          \
  do {                                                        \
    if (!(cond)) {                                            \
      fprintf(stderr, "%s:%d: %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                             \
    }                                                         \
  } while (0)

int main(void) {
  vlm_scenario* s = NULL;
  EXPECT(vlm_scenario_load("no-such-scenario", &s) != VLM_OK);
  EXPECT(strlen(vlm_last_error()) > 0);
  EXPECT(vlm_scenario_load(NULL, &s) == VLM_ERR_INVALID_ARGUMENT);
  EXPECT(vlm_scenario_load("massy", &s) == VLM_OK);
  EXPECT(strcmp(vlm_scenario_name(s), "massy") == 0);
  EXPECT(vlm_scenario_phase_count(s) == 3);

  vlm_controller* c = NULL;
  EXPECT(vlm_controller_create("bogus", &c) == VLM_ERR_CONFIG);
  EXPECT(vlm_controller_create("vlmlight", &c) == VLM_OK);
  EXPECT(vlm_controller_set_n_check(c, 0) == VLM_ERR_INVALID_ARGUMENT);
  EXPECT(vlm_controller_set_backend(c, "http", "", "", NULL, 0) == VLM_ERR_CONFIG);
  EXPECT(vlm_controller_set_ablation(c, 1, 0) == VLM_OK);
  EXPECT(strcmp(vlm_controller_label(c), "vlmlight-no-phase") == 0);

  vlm_episode_options o = vlm_episode_options_default();
  EXPECT(o.t_max == 600.0 && o.delta_t == 5.0);
  o.t_max = 120.0;
  o.log_events = 1;
  o.check_invariants = 1;
  vlm_episode* e = NULL;
  EXPECT(vlm_episode_run(s, c, 3, &o, &e) == VLM_OK);
  vlm_metrics m, n;
  EXPECT(vlm_episode_metrics(e, &m) == VLM_OK);
  EXPECT(vlm_episode_event_metrics(e, &n) == VLM_OK);
  EXPECT(m.has_att && m.att == n.att && m.awt == n.awt);
  EXPECT(vlm_episode_violation_count(e) == 0);
  char* text = NULL;
  EXPECT(vlm_episode_traces(e, &text) == VLM_OK && strstr(text, "\"controller\":\"vlmlight\"") != NULL);
  vlm_string_free(text);
  EXPECT(vlm_episode_snapshot(e, &text) == VLM_OK && strncmp(text, "<svg", 4) == 0);
  vlm_string_free(text);
  vlm_episode_free(e);

  o.delta_t = 0.7;
  EXPECT(vlm_episode_run(s, c, 3, &o, &e) == VLM_ERR_INVALID_ARGUMENT);
  o = vlm_episode_options_default();
  o.t_max = 120.0;

  vlm_controller* rl = NULL;
  EXPECT(vlm_controller_create("rl", &rl) == VLM_OK);
  EXPECT(vlm_episode_run(s, rl, 1, &o, &e) == VLM_ERR_CONFIG);
  vlm_policy* p = NULL;
  EXPECT(vlm_policy_load("/nonexistent/policy.bin", &p) == VLM_ERR_IO);

  uint64_t seeds[2] = {1, 2};
  vlm_report* r = NULL;
  EXPECT(vlm_experiment_run(s, c, seeds, 2, &o, 2, &r) == VLM_OK);
  vlm_summary sum;
  EXPECT(vlm_report_summary(r, &sum) == VLM_OK && sum.seeds == 2 && sum.att.n == 2 && sum.att.std_defined);
  uint64_t seed = 0;
  EXPECT(vlm_report_seed(r, 1, &seed, &m) == VLM_OK && seed == 2);
  EXPECT(vlm_report_seed(r, 2, &seed, &m) == VLM_ERR_INVALID_ARGUMENT);
  const vlm_report* list[1] = {r};
  EXPECT(vlm_reports_format(list, 1, "csv", &text) == VLM_OK && strstr(text, "massy,vlmlight-no-phase,") != NULL);
  vlm_string_free(text);
  EXPECT(vlm_reports_format(list, 1, "xml", &text) == VLM_ERR_INVALID_ARGUMENT);
  EXPECT(vlm_reports_export(list, 1, "/nonexistent/x.csv", "csv") == VLM_ERR_IO);

  vlm_report_free(r);
  vlm_controller_free(rl);
  vlm_controller_free(c);
  vlm_scenario_free(s);
  vlm_scenario_free(NULL);
  if (failures) fprintf(stderr, "%d failure(s)\n", failures);
  return failures ? 1 : 0;
}
