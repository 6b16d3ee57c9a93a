#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "vlmlight/vlmlight.h"

namespace {

// Carries a library failure up to main, which maps it to the exit code.
struct Failure {
  vlm_status status;
  std::string message;
};

void check(vlm_status s) {
  if (s != VLM_OK) throw Failure{s, vlm_last_error()};
}

[[noreturn]] void usage_error(const std::string& message) { throw Failure{VLM_ERR_INVALID_ARGUMENT, message}; }

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Scenario = std::unique_ptr<vlm_scenario, Deleter<vlm_scenario, vlm_scenario_free>>;
using Policy = std::unique_ptr<vlm_policy, Deleter<vlm_policy, vlm_policy_free>>;
using Controller = std::unique_ptr<vlm_controller, Deleter<vlm_controller, vlm_controller_free>>;
using Episode = std::unique_ptr<vlm_episode, Deleter<vlm_episode, vlm_episode_free>>;
using Report = std::unique_ptr<vlm_report, Deleter<vlm_report, vlm_report_free>>;
using Text = std::unique_ptr<char, Deleter<char, vlm_string_free>>;

Scenario load_scenario(const std::string& name) {
  vlm_scenario* s = nullptr;
  check(vlm_scenario_load(name.c_str(), &s));
  return Scenario(s);
}

Policy load_policy(const std::string& path) {
  vlm_policy* p = nullptr;
  check(vlm_policy_load(path.c_str(), &p));
  return Policy(p);
}

std::string take(char* s) {
  Text t(s);
  return t ? std::string(t.get()) : std::string();
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Failure{VLM_ERR_IO, "cannot write " + path};
  out << body;
  if (!out) throw Failure{VLM_ERR_IO, "write failed for " + path};
}

struct Timing {
  double t_max = 600.0;
  double delta_t = 5.0;
  double warmup = 60.0;

  vlm_episode_options options() const {
    vlm_episode_options o = vlm_episode_options_default();
    o.t_max = t_max;
    o.delta_t = delta_t;
    o.warmup = warmup;
    return o;
  }
};

struct AgentFlags {
  std::string backend = "scripted";
  std::string endpoint, model, api_key;
  double timeout = 0.0;
  std::vector<std::string> ablate;
  int n_check = 3;
  std::string templates;
  std::string policy;

  void add_to(CLI::App* cmd, bool with_ablate) {
    cmd->add_option("--backend", backend, "Agent backend for vlmlight")
        ->check(CLI::IsMember({"scripted", "http", "invalid"}));
    cmd->add_option("--endpoint", endpoint, "HTTP backend base URL (default: LLM_API_BASE)");
    cmd->add_option("--model", model, "HTTP backend model (default: LLM_MODEL)");
    cmd->add_option("--api-key", api_key, "HTTP backend key (default: LLM_API_KEY)");
    cmd->add_option("--timeout", timeout, "HTTP timeout in seconds (default 30)");
    cmd->add_option("--n-check", n_check, "Verification attempts per deliberative tick")->check(CLI::PositiveNumber);
    cmd->add_option("--templates", templates, "Directory of <role>.txt prompt templates");
    cmd->add_option("--policy", policy, "Trained policy checkpoint (rl; vlmlight fast branch)");
    if (with_ablate)
      cmd->add_option("--ablate", ablate, "Disable an agent in vlmlight")->check(CLI::IsMember({"phase", "check"}));
  }

  // kind may carry ablation suffixes: vlmlight-no-phase, vlmlight-no-check.
  Controller make(std::string kind, const Policy& loaded) const {
    bool no_phase = false, no_check = false;
    for (const auto& a : ablate) (a == "phase" ? no_phase : no_check) = true;
    for (const auto& [suffix, flag] : {std::pair<std::string, bool*>{"-no-phase", &no_phase}, {"-no-check", &no_check}}) {
      const auto pos = kind.find(suffix);
      if (kind.rfind("vlmlight", 0) == 0 && pos != std::string::npos) {
        *flag = true;
        kind.erase(pos, suffix.size());
      }
    }
    vlm_controller* c = nullptr;
    check(vlm_controller_create(kind.c_str(), &c));
    Controller ctl(c);
    if (loaded) check(vlm_controller_set_policy(c, loaded.get()));
    if (kind == "vlmlight") {
      check(vlm_controller_set_backend(c, backend.c_str(), endpoint.empty() ? nullptr : endpoint.c_str(),
                                       model.empty() ? nullptr : model.c_str(),
                                       api_key.empty() ? nullptr : api_key.c_str(), timeout));
      check(vlm_controller_set_ablation(c, no_phase, no_check));
      check(vlm_controller_set_n_check(c, n_check));
      if (!templates.empty()) check(vlm_controller_set_template_dir(c, templates.c_str()));
    }
    return ctl;
  }
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<uint64_t> seed_list(int count, uint64_t first) {
  if (count < 1) usage_error("--seeds must be at least 1");
  std::vector<uint64_t> seeds;
  for (int i = 0; i < count; ++i) seeds.push_back(first + static_cast<uint64_t>(i));
  return seeds;
}

std::string fmt(const vlm_stat& s) {
  if (!s.has_mean) return "-";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f +/- %.2f", s.mean, s.std);
  return buf;
}

void print_row(const std::string& label, const vlm_summary& s) {
  std::printf("%-22s ATT %-18s AWT %-18s AETT %-18s AEWT %-18s incomplete %d\n", label.c_str(), fmt(s.att).c_str(),
              fmt(s.awt).c_str(), fmt(s.aett).c_str(), fmt(s.aewt).c_str(), s.incomplete_count);
}

Report experiment(const Scenario& scenario, const Controller& ctl, const std::vector<uint64_t>& seeds,
                  const Timing& timing, int workers) {
  const auto opts = timing.options();
  vlm_report* r = nullptr;
  check(vlm_experiment_run(scenario.get(), ctl.get(), seeds.data(), seeds.size(), &opts, workers, &r));
  return Report(r);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VLMLight: traffic signal control with a fast RL branch and a deliberative agent chain"};
  app.require_subcommand(1);
  app.fallthrough();
  Timing timing;
  app.add_option("--delta-t", timing.delta_t, "Control interval in seconds")->check(CLI::PositiveNumber);
  app.add_option("--t-max", timing.t_max, "Episode horizon in seconds")->check(CLI::PositiveNumber);
  app.add_option("--warmup", timing.warmup, "Vehicles entering before this are not measured")
      ->check(CLI::NonNegativeNumber);
  int workers = 0;
  app.add_option("--workers", workers, "Parallel episodes (0 = all cores)")->check(CLI::NonNegativeNumber);
  app.set_version_flag("--version", vlm_version());

  // simulate
  auto* sim = app.add_subcommand("simulate", "Run one episode and write its summary JSON");
  std::string sim_topology, sim_controller = "maxpressure", sim_out, sim_events, sim_traces, sim_snapshot;
  double sim_duration = 0.0;
  uint64_t sim_seed = 1;
  bool sim_check = false;
  AgentFlags sim_agents;
  sim->add_option("--topology", sim_topology, "Built-in scenario name or scenario JSON")->required();
  sim->add_option("--controller", sim_controller, "fixtime | webster | maxpressure | rl | vlmlight[-no-phase|-no-check]");
  sim->add_option("--duration", sim_duration, "Episode length in seconds (default: --t-max)");
  sim->add_option("--seed", sim_seed, "Demand seed");
  sim->add_option("--out", sim_out, "Summary JSON path")->required();
  sim->add_option("--events", sim_events, "Also write the raw event log (NDJSON)");
  sim->add_option("--traces", sim_traces, "Also write the decision traces (NDJSON)");
  sim->add_option("--snapshot", sim_snapshot, "Also write an SVG of the final state");
  sim->add_flag("--check-invariants", sim_check, "Record safety violations in the summary");
  sim_agents.add_to(sim, true);

  // train
  auto* tr = app.add_subcommand("train", "Train the PPO policy");
  std::string tr_scenario, tr_out, tr_curve;
  long tr_steps = 100000;
  uint64_t tr_seed = 1;
  tr->add_option("--scenario", tr_scenario, "Built-in scenario name or scenario JSON")->required();
  tr->add_option("--steps", tr_steps, "Environment steps")->check(CLI::PositiveNumber);
  tr->add_option("--out", tr_out, "Checkpoint path")->required();
  tr->add_option("--seed", tr_seed, "Training seed");
  tr->add_option("--curve", tr_curve, "Reward curve CSV path");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Evaluate a trained policy on held-out seeds against MaxPressure");
  std::string ev_policy, ev_scenario, ev_csv;
  int ev_seeds = 10;
  uint64_t ev_first = 1;
  ev->add_option("--policy", ev_policy, "Checkpoint path")->required();
  ev->add_option("--scenario", ev_scenario, "Built-in scenario name or scenario JSON")->required();
  ev->add_option("--seeds", ev_seeds, "Number of seeds");
  ev->add_option("--first-seed", ev_first, "First seed");
  ev->add_option("--csv", ev_csv, "Write the rl and maxpressure rows as CSV");

  // compare
  auto* cmp = app.add_subcommand("compare", "Run several controllers on the same seeds and export a table");
  std::string cmp_controllers, cmp_scenario, cmp_csv, cmp_json;
  int cmp_seeds = 10;
  uint64_t cmp_first = 1;
  AgentFlags cmp_agents;
  cmp->add_option("--controllers", cmp_controllers, "Comma-separated controller list")->required();
  cmp->add_option("--scenario", cmp_scenario, "Built-in scenario name or scenario JSON")->required();
  cmp->add_option("--seeds", cmp_seeds, "Number of seeds");
  cmp->add_option("--first-seed", cmp_first, "First seed");
  cmp->add_option("--csv", cmp_csv, "CSV output path")->required();
  cmp->add_option("--json", cmp_json, "Also write the reports with per-seed values as JSON");
  cmp_agents.add_to(cmp, true);

  // render
  auto* rd = app.add_subcommand("render", "Simulate up to a time and write a top-down SVG snapshot");
  std::string rd_scenario, rd_out, rd_controller = "maxpressure";
  double rd_at = 0.0;
  uint64_t rd_seed = 1;
  AgentFlags rd_agents;
  rd->add_option("--scenario", rd_scenario, "Built-in scenario name or scenario JSON")->required();
  rd->add_option("--at", rd_at, "Snapshot time in seconds (multiple of --delta-t)")->required();
  rd->add_option("--out", rd_out, "SVG path")->required();
  rd->add_option("--controller", rd_controller, "Controller driving the signal until --at");
  rd->add_option("--seed", rd_seed, "Demand seed");
  rd_agents.add_to(rd, true);

  // mock-server
  auto* ms = app.add_subcommand("mock-server", "Serve a local OpenAI-compatible endpoint for offline tests");
  int ms_port = 8000, ms_phase = 1;
  ms->add_option("--port", ms_port, "Port on 127.0.0.1");
  ms->add_option("--phase", ms_phase, "Phase every Plan/Check reply proposes");

  auto* sc = app.add_subcommand("scenarios", "List built-in scenarios and controllers");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*sim) {
      Timing t = timing;
      if (sim_duration > 0.0) t.t_max = sim_duration;
      auto scenario = load_scenario(sim_topology);
      Policy policy = sim_agents.policy.empty() ? Policy() : load_policy(sim_agents.policy);
      auto ctl = sim_agents.make(sim_controller, policy);
      auto opts = t.options();
      opts.log_events = !sim_events.empty();
      opts.check_invariants = sim_check;
      vlm_episode* e = nullptr;
      check(vlm_episode_run(scenario.get(), ctl.get(), sim_seed, &opts, &e));
      Episode ep(e);
      char* s = nullptr;
      check(vlm_episode_json(ep.get(), &s));
      write_file(sim_out, take(s));
      if (!sim_events.empty()) {
        check(vlm_episode_events(ep.get(), &s));
        write_file(sim_events, take(s));
      }
      if (!sim_traces.empty()) {
        check(vlm_episode_traces(ep.get(), &s));
        write_file(sim_traces, take(s));
      }
      if (!sim_snapshot.empty()) {
        check(vlm_episode_snapshot(ep.get(), &s));
        write_file(sim_snapshot, take(s));
      }
      vlm_metrics m;
      check(vlm_episode_metrics(ep.get(), &m));
      std::printf("%s on %s, seed %llu: ATT %.2f s, AWT %.2f s, completed %d, incomplete %d, violations %zu\n",
                  vlm_controller_label(ctl.get()), vlm_scenario_name(scenario.get()),
                  static_cast<unsigned long long>(sim_seed), m.att, m.awt, m.completed, m.incomplete,
                  vlm_episode_violation_count(ep.get()));
    } else if (*tr) {
      auto scenario = load_scenario(tr_scenario);
      vlm_policy* p = nullptr;
      char* curve = nullptr;
      auto progress = [](const vlm_train_stat* s, void*) {
        std::printf("update %3d  steps %7ld  mean reward %9.4f  policy loss %8.4f  value loss %8.4f  lr %.2e\n",
                    s->update, s->steps, s->mean_reward, s->policy_loss, s->value_loss, s->lr);
        std::fflush(stdout);
      };
      check(vlm_train(scenario.get(), tr_steps, tr_seed, progress, nullptr, &p, &curve));
      Policy policy(p);
      const std::string curve_csv = take(curve);
      check(vlm_policy_save(policy.get(), tr_out.c_str()));
      if (!tr_curve.empty()) write_file(tr_curve, curve_csv);
      std::printf("saved %s\n", tr_out.c_str());
    } else if (*ev) {
      auto scenario = load_scenario(ev_scenario);
      auto policy = load_policy(ev_policy);
      const auto seeds = seed_list(ev_seeds, ev_first);
      AgentFlags none;
      auto rl = none.make("rl", policy);
      auto mp = none.make("maxpressure", Policy());
      auto r_rl = experiment(scenario, rl, seeds, timing, workers);
      auto r_mp = experiment(scenario, mp, seeds, timing, workers);
      vlm_summary s_rl, s_mp;
      check(vlm_report_summary(r_rl.get(), &s_rl));
      check(vlm_report_summary(r_mp.get(), &s_mp));
      print_row("rl", s_rl);
      print_row("maxpressure", s_mp);
      if (s_rl.att.has_mean && s_mp.att.has_mean)
        std::printf("ATT ratio rl / maxpressure: %.4f\n", s_rl.att.mean / s_mp.att.mean);
      if (!ev_csv.empty()) {
        const vlm_report* list[] = {r_rl.get(), r_mp.get()};
        check(vlm_reports_export(list, 2, ev_csv.c_str(), "csv"));
      }
    } else if (*cmp) {
      auto scenario = load_scenario(cmp_scenario);
      Policy policy = cmp_agents.policy.empty() ? Policy() : load_policy(cmp_agents.policy);
      const auto seeds = seed_list(cmp_seeds, cmp_first);
      const auto kinds = split_list(cmp_controllers);
      if (kinds.empty()) usage_error("--controllers is empty");
      std::vector<Controller> controllers;
      for (const auto& kind : kinds) controllers.push_back(cmp_agents.make(kind, policy));
      std::vector<Report> reports;
      for (const auto& ctl : controllers) {
        reports.push_back(experiment(scenario, ctl, seeds, timing, workers));
        vlm_summary s;
        check(vlm_report_summary(reports.back().get(), &s));
        print_row(vlm_controller_label(ctl.get()), s);
      }
      std::vector<const vlm_report*> list;
      for (const auto& r : reports) list.push_back(r.get());
      check(vlm_reports_export(list.data(), list.size(), cmp_csv.c_str(), "csv"));
      if (!cmp_json.empty()) check(vlm_reports_export(list.data(), list.size(), cmp_json.c_str(), "json"));
    } else if (*rd) {
      Timing t = timing;
      t.t_max = rd_at;
      if (t.warmup >= t.t_max) t.warmup = 0.0;
      auto scenario = load_scenario(rd_scenario);
      Policy policy = rd_agents.policy.empty() ? Policy() : load_policy(rd_agents.policy);
      auto ctl = rd_agents.make(rd_controller, policy);
      const auto opts = t.options();
      vlm_episode* e = nullptr;
      check(vlm_episode_run(scenario.get(), ctl.get(), rd_seed, &opts, &e));
      Episode ep(e);
      char* s = nullptr;
      check(vlm_episode_snapshot(ep.get(), &s));
      write_file(rd_out, take(s));
      std::printf("wrote %s\n", rd_out.c_str());
    } else if (*ms) {
      std::printf("serving on http://127.0.0.1:%d\n", ms_port);
      std::fflush(stdout);
      check(vlm_mock_server_serve(ms_port, ms_phase));
    } else if (*sc) {
      char* s = nullptr;
      check(vlm_builtin_scenarios(&s));
      std::printf("scenarios:\n%s", take(s).c_str());
      check(vlm_controller_kinds(&s));
      std::printf("controllers:\n%s", take(s).c_str());
    }
  } catch (const Failure& f) {
    std::fprintf(stderr, "error [%s]: %s\n", vlm_status_name(f.status), f.message.c_str());
    return static_cast<int>(f.status);
  }
  return 0;
}
