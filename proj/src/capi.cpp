#include "vlmlight/vlmlight.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <memory>
#include <string>

#include "agents/mock_server.hpp"
#include "bench.hpp"
#include "error.hpp"
#include "orchestrator.hpp"
#include "rl/ppo.hpp"
#include "scene.hpp"

using namespace vlmlight;

struct vlm_scenario {
  Scenario scenario;
};
struct vlm_policy {
  std::shared_ptr<const PolicyNet> net;
  int movements = 0;
};
struct vlm_controller {
  ControllerSpec spec;
  std::string label;
  int movements = 0;  // of the attached policy
};
struct vlm_episode {
  std::string scenario;
  std::string controller;
  EpisodeOptions options;
  EpisodeResult result;
};
struct vlm_report {
  MetricsReport report;
};
struct vlm_mock_server {
  std::unique_ptr<MockChatServer> server;
  std::string url;
};

namespace {

thread_local std::string g_last_error;

vlm_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return VLM_ERR_INVALID_ARGUMENT;
    case ErrorKind::Parse: return VLM_ERR_PARSE;
    case ErrorKind::Config: return VLM_ERR_CONFIG;
    case ErrorKind::Io: return VLM_ERR_IO;
    case ErrorKind::Backend: return VLM_ERR_BACKEND;
    case ErrorKind::Numeric: return VLM_ERR_NUMERIC;
    case ErrorKind::Internal: return VLM_ERR_INTERNAL;
  }
  return VLM_ERR_INTERNAL;
}

template <typename F>
vlm_status guarded(F&& body) {
  g_last_error.clear();
  try {
    body();
    return VLM_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return VLM_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return VLM_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) fail(ErrorKind::InvalidArgument, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string s;
  for (const auto& i : items) s += i + "\n";
  return s;
}

EpisodeOptions episode_options(const vlm_episode_options* o) {
  EpisodeOptions e;
  if (o) {
    e.t_max = o->t_max;
    e.delta_t = o->delta_t;
    e.dt = o->dt;
    e.warmup = o->warmup;
    e.log_events = o->log_events != 0;
    e.check_invariants = o->check_invariants != 0;
  }
  e.validate();
  return e;
}

void fill_metrics(const SeedMetrics& m, vlm_metrics* out) {
  *out = vlm_metrics{};
  out->has_att = m.att.has_value();
  out->has_awt = m.awt.has_value();
  out->has_aett = m.aett.has_value();
  out->has_aewt = m.aewt.has_value();
  out->att = m.att.value_or(0.0);
  out->awt = m.awt.value_or(0.0);
  out->aett = m.aett.value_or(0.0);
  out->aewt = m.aewt.value_or(0.0);
  out->completed = m.completed;
  out->emergency_completed = m.emergency_completed;
  out->incomplete = m.incomplete;
}

vlm_stat to_stat(const MetricStat& s) {
  vlm_stat out{};
  out.has_mean = s.mean.has_value();
  out.mean = s.mean.value_or(0.0);
  out.std = s.std.value_or(0.0);
  out.std_defined = s.std_defined;
  out.n = s.n;
  return out;
}

void check_policy_fits(const vlm_controller& c, const Scenario& s) {
  if (c.spec.policy && c.movements != 0 && c.movements != s.topology.movement_count())
    fail(ErrorKind::Config, "policy was trained on " + std::to_string(c.movements) + " movements, scenario '" +
                                s.name + "' has " + std::to_string(s.topology.movement_count()));
}

nlohmann::json metrics_json(const SeedMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"ATT", opt(m.att)},
          {"AWT", opt(m.awt)},
          {"AETT", opt(m.aett)},
          {"AEWT", opt(m.aewt)},
          {"completed", m.completed},
          {"emergency_completed", m.emergency_completed},
          {"incomplete", m.incomplete}};
}

}  // namespace

extern "C" {

const char* vlm_version(void) { return "1.0.0"; }
const char* vlm_last_error(void) { return g_last_error.c_str(); }

const char* vlm_status_name(vlm_status status) {
  switch (status) {
    case VLM_OK: return "ok";
    case VLM_ERR_INVALID_ARGUMENT: return "invalid-argument";
    case VLM_ERR_PARSE: return "parse-error";
    case VLM_ERR_CONFIG: return "config-error";
    case VLM_ERR_IO: return "io-error";
    case VLM_ERR_BACKEND: return "backend-error";
    case VLM_ERR_NUMERIC: return "numeric-error";
    case VLM_ERR_INTERNAL: return "internal-error";
  }
  return "unknown";
}

void vlm_string_free(char* s) { std::free(s); }

vlm_status vlm_scenario_load(const char* name_or_path, vlm_scenario** out) {
  return guarded([&] {
    require(name_or_path, "scenario");
    require(out, "out");
    *out = new vlm_scenario{resolve_scenario(name_or_path)};
  });
}

void vlm_scenario_free(vlm_scenario* scenario) { delete scenario; }
const char* vlm_scenario_name(const vlm_scenario* s) { return s ? s->scenario.name.c_str() : ""; }
int vlm_scenario_phase_count(const vlm_scenario* s) { return s ? s->scenario.topology.phase_count() : 0; }

vlm_status vlm_builtin_scenarios(char** out) {
  return guarded([&] {
    require(out, "out");
    *out = dup_string(join(builtin_scenario_names()));
  });
}

vlm_status vlm_policy_load(const char* path, vlm_policy** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    int movements = 0;
    auto net = std::make_shared<const PolicyNet>(load_checkpoint(path, &movements));
    *out = new vlm_policy{std::move(net), movements};
  });
}

vlm_status vlm_policy_save(const vlm_policy* policy, const char* path) {
  return guarded([&] {
    require(policy, "policy");
    require(path, "path");
    save_checkpoint(*policy->net, policy->movements, path);
  });
}

void vlm_policy_free(vlm_policy* policy) { delete policy; }

vlm_status vlm_train(const vlm_scenario* scenario, long steps, uint64_t seed, vlm_train_callback progress, void* user,
                     vlm_policy** out, char** curve_csv) {
  return guarded([&] {
    require(scenario, "scenario");
    require(out, "out");
    PPOConfig config;
    config.total_steps = steps;
    config.validate();
    TrainProgress cb;
    if (progress)
      cb = [&](const UpdateStat& s) {
        vlm_train_stat st{s.update, s.steps, s.mean_reward, s.policy_loss, s.value_loss, s.lr};
        progress(&st, user);
      };
    auto result = train(scenario->scenario, config, seed, cb);
    auto policy = std::make_unique<vlm_policy>();
    policy->net = std::make_shared<const PolicyNet>(std::move(result.net));
    policy->movements = scenario->scenario.topology.movement_count();
    if (curve_csv) *curve_csv = dup_string(format_reward_curve(result.curve));
    *out = policy.release();
  });
}

vlm_status vlm_controller_create(const char* kind, vlm_controller** out) {
  return guarded([&] {
    require(kind, "kind");
    require(out, "out");
    const auto kinds = controller_kinds();
    if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end())
      fail(ErrorKind::Config, std::string("unknown controller '") + kind +
                                  "' (expected fixtime, webster, maxpressure, rl or vlmlight)");
    auto c = std::make_unique<vlm_controller>();
    c->spec.kind = kind;
    c->label = controller_label(c->spec);
    *out = c.release();
  });
}

void vlm_controller_free(vlm_controller* controller) { delete controller; }

vlm_status vlm_controller_kinds(char** out) {
  return guarded([&] {
    require(out, "out");
    *out = dup_string(join(controller_kinds()));
  });
}

vlm_status vlm_controller_set_policy(vlm_controller* c, const vlm_policy* policy) {
  return guarded([&] {
    require(c, "controller");
    require(policy, "policy");
    c->spec.policy = policy->net;
    c->movements = policy->movements;
  });
}

vlm_status vlm_controller_set_backend(vlm_controller* c, const char* kind, const char* endpoint, const char* model,
                                      const char* api_key, double timeout_s) {
  return guarded([&] {
    require(c, "controller");
    require(kind, "kind");
    BackendConfig cfg = BackendConfig::from_env(kind);
    if (endpoint) cfg.endpoint = endpoint;
    if (model) cfg.model = model;
    if (api_key) cfg.api_key = api_key;
    if (timeout_s > 0.0) cfg.timeout_s = timeout_s;
    cfg.validate();
    c->spec.backend = cfg;
  });
}

vlm_status vlm_controller_set_ablation(vlm_controller* c, int disable_phase, int disable_check) {
  return guarded([&] {
    require(c, "controller");
    c->spec.orchestrator.ablate_phase = disable_phase != 0;
    c->spec.orchestrator.ablate_check = disable_check != 0;
    c->label = controller_label(c->spec);
  });
}

vlm_status vlm_controller_set_n_check(vlm_controller* c, int n_check) {
  return guarded([&] {
    require(c, "controller");
    OrchestratorOptions o = c->spec.orchestrator;
    o.n_check = n_check;
    o.validate();
    c->spec.orchestrator = o;
  });
}

vlm_status vlm_controller_set_template_dir(vlm_controller* c, const char* dir) {
  return guarded([&] {
    require(c, "controller");
    c->spec.orchestrator.template_dir = dir ? dir : "";
  });
}

const char* vlm_controller_label(const vlm_controller* c) { return c ? c->label.c_str() : ""; }

vlm_episode_options vlm_episode_options_default(void) {
  EpisodeOptions e;
  return vlm_episode_options{e.t_max, e.delta_t, e.dt, e.warmup, e.log_events ? 1 : 0, e.check_invariants ? 1 : 0};
}

vlm_status vlm_episode_run(const vlm_scenario* scenario, const vlm_controller* controller, uint64_t seed,
                           const vlm_episode_options* options, vlm_episode** out) {
  return guarded([&] {
    require(scenario, "scenario");
    require(controller, "controller");
    require(out, "out");
    check_policy_fits(*controller, scenario->scenario);
    auto ep = std::make_unique<vlm_episode>();
    ep->scenario = scenario->scenario.name;
    ep->controller = controller->label;
    ep->options = episode_options(options);
    ep->result = run_episode(scenario->scenario, controller->spec, seed, ep->options);
    *out = ep.release();
  });
}

void vlm_episode_free(vlm_episode* episode) { delete episode; }

vlm_status vlm_episode_metrics(const vlm_episode* ep, vlm_metrics* out) {
  return guarded([&] {
    require(ep, "episode");
    require(out, "out");
    fill_metrics(compute_metrics(ep->result.records, ep->options.warmup), out);
  });
}

vlm_status vlm_episode_event_metrics(const vlm_episode* ep, vlm_metrics* out) {
  return guarded([&] {
    require(ep, "episode");
    require(out, "out");
    if (!ep->options.log_events) fail(ErrorKind::InvalidArgument, "episode was run without the event log");
    fill_metrics(metrics_from_events(ep->result.events, ep->options.warmup, ep->options.dt), out);
  });
}

vlm_status vlm_episode_json(const vlm_episode* ep, char** out) {
  return guarded([&] {
    require(ep, "episode");
    require(out, "out");
    const auto& r = ep->result;
    nlohmann::json history = nlohmann::json::array();
    for (const auto& g : r.signal_history)
      history.push_back({{"phase", g.phase}, {"start", g.start}, {"end", g.end ? nlohmann::json(*g.end) : nlohmann::json(nullptr)}});
    nlohmann::json traces = nlohmann::json::array();
    for (const auto& t : r.traces) traces.push_back(trace_to_json(t));
    nlohmann::json doc = {{"scenario", ep->scenario},
                          {"controller", ep->controller},
                          {"seed", r.seed},
                          {"t_max", ep->options.t_max},
                          {"delta_t", ep->options.delta_t},
                          {"metrics", metrics_json(compute_metrics(r.records, ep->options.warmup))},
                          {"spawned", r.spawned},
                          {"exited", r.exited},
                          {"in_world", r.in_world},
                          {"violations", r.violations},
                          {"signal_history", history},
                          {"traces", traces}};
    *out = dup_string(doc.dump(2) + "\n");
  });
}

vlm_status vlm_episode_traces(const vlm_episode* ep, char** out) {
  return guarded([&] {
    require(ep, "episode");
    require(out, "out");
    *out = dup_string(format_traces(ep->result.traces));
  });
}

vlm_status vlm_episode_events(const vlm_episode* ep, char** out) {
  return guarded([&] {
    require(ep, "episode");
    require(out, "out");
    std::string s;
    for (const auto& e : ep->result.events) s += format_event(e) + "\n";
    *out = dup_string(s);
  });
}

size_t vlm_episode_violation_count(const vlm_episode* ep) { return ep ? ep->result.violations.size() : 0; }

vlm_status vlm_episode_snapshot(const vlm_episode* ep, char** out) {
  return guarded([&] {
    require(ep, "episode");
    require(out, "out");
    *out = dup_string(render_snapshot(*ep->result.world, ep->result.signal));
  });
}

vlm_status vlm_experiment_run(const vlm_scenario* scenario, const vlm_controller* controller, const uint64_t* seeds,
                              size_t seed_count, const vlm_episode_options* options, int workers, vlm_report** out) {
  return guarded([&] {
    require(scenario, "scenario");
    require(controller, "controller");
    require(seeds, "seeds");
    require(out, "out");
    check_policy_fits(*controller, scenario->scenario);
    ExperimentOptions o;
    o.episode = episode_options(options);
    o.workers = workers;
    std::vector<std::uint64_t> list(seeds, seeds + seed_count);
    auto rep = std::make_unique<vlm_report>();
    rep->report = run_experiment(scenario->scenario, controller->spec, list, o);
    *out = rep.release();
  });
}

void vlm_report_free(vlm_report* report) { delete report; }

vlm_status vlm_report_summary(const vlm_report* report, vlm_summary* out) {
  return guarded([&] {
    require(report, "report");
    require(out, "out");
    const auto& r = report->report;
    *out = vlm_summary{to_stat(r.att), to_stat(r.awt), to_stat(r.aett), to_stat(r.aewt), r.seeds, r.incomplete_count};
  });
}

vlm_status vlm_report_seed(const vlm_report* report, size_t index, uint64_t* seed, vlm_metrics* out) {
  return guarded([&] {
    require(report, "report");
    require(out, "out");
    if (index >= report->report.per_seed.size()) fail(ErrorKind::InvalidArgument, "seed index out of range");
    const auto& m = report->report.per_seed[index];
    if (seed) *seed = m.seed;
    fill_metrics(m, out);
  });
}

namespace {
std::vector<MetricsReport> collect(const vlm_report* const* reports, size_t count) {
  require(reports, "reports");
  std::vector<MetricsReport> out;
  for (size_t i = 0; i < count; ++i) {
    require(reports[i], "report");
    out.push_back(reports[i]->report);
  }
  return out;
}
}  // namespace

vlm_status vlm_reports_format(const vlm_report* const* reports, size_t count, const char* format, char** out) {
  return guarded([&] {
    require(format, "format");
    require(out, "out");
    const auto list = collect(reports, count);
    const std::string f = format;
    if (f == "csv") {
      *out = dup_string(format_csv(list));
    } else if (f == "json") {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& r : list) arr.push_back(report_to_json(r));
      *out = dup_string(arr.dump(2) + "\n");
    } else {
      fail(ErrorKind::InvalidArgument, "format must be csv or json");
    }
  });
}

vlm_status vlm_reports_export(const vlm_report* const* reports, size_t count, const char* path, const char* format) {
  return guarded([&] {
    require(path, "path");
    require(format, "format");
    export_table(collect(reports, count), path, format);
  });
}

vlm_status vlm_mock_server_start(int port, int phase, vlm_mock_server** out) {
  return guarded([&] {
    require(out, "out");
    auto m = std::make_unique<vlm_mock_server>();
    m->server = std::make_unique<MockChatServer>(mock_fixed_handler(phase));
    m->server->start(port);
    m->url = m->server->base_url();
    *out = m.release();
  });
}

const char* vlm_mock_server_url(const vlm_mock_server* s) { return s ? s->url.c_str() : ""; }
size_t vlm_mock_server_request_count(const vlm_mock_server* s) { return s ? s->server->requests().size() : 0; }

void vlm_mock_server_free(vlm_mock_server* s) {
  if (s) s->server->stop();
  delete s;
}

vlm_status vlm_mock_server_serve(int port, int phase) {
  return guarded([&] {
    MockChatServer server(mock_fixed_handler(phase));
    server.serve(port);
  });
}

}  // extern "C"
