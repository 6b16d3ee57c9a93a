#include "orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "error.hpp"
#include "rl/rl_controller.hpp"
#include "rule_controllers.hpp"

namespace vlmlight {

using nlohmann::json;

std::string_view to_string(ControlMode mode) { return mode == ControlMode::RL ? "rl" : "deliberative"; }

ControlMode parse_control_mode(std::string_view text) {
  if (text == "rl") return ControlMode::RL;
  if (text == "deliberative") return ControlMode::Deliberative;
  fail(ErrorKind::Parse, "unknown control mode '" + std::string(text) + "'");
}

namespace {

json optional_phase(const std::optional<PhaseId>& p) { return p ? json(*p) : json(nullptr); }

std::optional<PhaseId> read_optional_phase(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<int>();
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

std::string phase_set_text(const std::vector<PhaseId>& phases) {
  std::string s = "[";
  for (size_t i = 0; i < phases.size(); ++i) s += (i ? ", " : "") + std::to_string(phases[i]);
  return s + "]";
}

bool contains(const std::vector<PhaseId>& set, PhaseId p) { return std::find(set.begin(), set.end(), p) != set.end(); }

// Runs one agent call; backend errors become a message instead of a throw.
std::optional<std::string> call_agent(Backend& backend, const AgentRequest& req, std::string& error) {
  try {
    return backend.complete(req);
  } catch (const std::exception& e) {
    error = std::string(to_string(req.role)) + " agent failed: " + e.what();
    return std::nullopt;
  }
}

std::string phase_map_text(const Topology& topo) {
  std::string s;
  for (const auto& ph : topo.phases) {
    s += "Phase " + std::to_string(ph.id) + ":";
    for (MovementId m : ph.movements) {
      const auto& mv = topo.movement(m);
      s += " movement " + std::to_string(m) + " (" + topo.approach(mv.from).heading + " " +
           std::string(to_string(mv.turn)) + " to " + topo.approach(mv.to).heading + ")";
    }
    s += "\n";
  }
  return s;
}

}  // namespace

json trace_to_json(const DecisionTrace& t) {
  json attempts = json::array();
  for (const auto& a : t.attempts)
    attempts.push_back(
        {{"attempt", a.attempt}, {"proposed", optional_phase(a.proposed)}, {"feasible", a.feasible}, {"reason", a.reason}});
  return {{"t", t.t},
          {"controller", t.controller},
          {"mode", std::string(to_string(t.mode))},
          {"feasible", t.feasible},
          {"scenes", t.scenes},
          {"phase_text", t.phase_text},
          {"llm_action", optional_phase(t.llm_action)},
          {"rationale", t.rationale},
          {"attempts", attempts},
          {"routine_action", t.routine_action},
          {"final_action", t.final_action},
          {"fallback", t.fallback},
          {"accepted", t.accepted},
          {"notes", t.notes}};
}

DecisionTrace trace_from_json(const json& j) {
  try {
    DecisionTrace t;
    t.t = j.at("t").get<double>();
    t.controller = j.at("controller").get<std::string>();
    t.mode = parse_control_mode(j.at("mode").get<std::string>());
    t.feasible = j.at("feasible").get<std::vector<int>>();
    t.scenes = j.at("scenes").get<std::vector<std::string>>();
    t.phase_text = j.at("phase_text").get<std::string>();
    t.llm_action = read_optional_phase(j.at("llm_action"));
    t.rationale = j.at("rationale").get<std::string>();
    for (const auto& a : j.at("attempts"))
      t.attempts.push_back({a.at("attempt").get<int>(), read_optional_phase(a.at("proposed")),
                            a.at("feasible").get<bool>(), a.at("reason").get<std::string>()});
    t.routine_action = j.at("routine_action").get<int>();
    t.final_action = j.at("final_action").get<int>();
    t.fallback = j.at("fallback").get<bool>();
    t.accepted = j.at("accepted").get<std::string>();
    t.notes = j.at("notes").get<std::vector<std::string>>();
    return t;
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, std::string("decision trace: ") + e.what());
  }
}

std::string format_traces(const std::vector<DecisionTrace>& traces) {
  std::string out;
  for (const auto& t : traces) out += trace_to_json(t).dump() + "\n";
  return out;
}

std::vector<DecisionTrace> parse_traces(const std::string& text) {
  std::vector<DecisionTrace> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) fail(ErrorKind::Parse, "decision trace: malformed line");
    out.push_back(trace_from_json(j));
  }
  return out;
}

void OrchestratorOptions::validate() const {
  if (n_check < 1) fail(ErrorKind::InvalidArgument, "n-check must be at least 1");
}

ControlMode select_mode(const std::vector<SceneDescription>& descriptions, Backend& backend,
                        const OrchestratorOptions& options, std::string* note) {
  if (descriptions.empty()) fail(ErrorKind::InvalidArgument, "select_mode: no scene descriptions");
  AgentRequest req;
  req.role = AgentRole::ModeSelector;
  std::vector<std::string> texts;
  json scenes = json::array();
  for (const auto& d : descriptions) {
    texts.push_back(d.text);
    scenes.push_back(observation_to_json(d.facts));
  }
  req.prompt = fill_template(load_template(AgentRole::ModeSelector, options.template_dir), {{"scenes", join_lines(texts)}});
  req.inputs = {{"scenes", scenes}};
  std::string error;
  const auto reply = call_agent(backend, req, error);
  if (!reply) {
    if (note) *note = error + "; routing to RL";
    return ControlMode::RL;
  }
  std::string upper = *reply;
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  if (upper.find("DELIBERATIVE") != std::string::npos) return ControlMode::Deliberative;
  if (upper.find("RL") != std::string::npos) return ControlMode::RL;
  if (note) *note = "mode selector reply held no mode; routing to RL";
  return ControlMode::RL;
}

namespace {

PlanResult run_plan(AgentRequest req, Backend& backend) {
  PlanResult r;
  std::string error;
  const auto reply = call_agent(backend, req, error);
  if (!reply) {
    r.error = error;
    return r;
  }
  r.raw = *reply;
  try {
    const auto obj = extract_json(*reply);
    r.action = obj.action;
    if (obj.object.contains("rationale") && obj.object["rationale"].is_string())
      r.rationale = obj.object["rationale"].get<std::string>();
  } catch (const Error& e) {
    r.error = std::string("plan output unusable: ") + e.what();
  }
  return r;
}

}  // namespace

PlanResult plan_signal(const std::vector<PhaseDescription>& phases, PhaseId current, Backend& backend,
                       const OrchestratorOptions& options) {
  if (phases.empty()) fail(ErrorKind::InvalidArgument, "plan_signal: no phase descriptions");
  AgentRequest req;
  req.role = AgentRole::Plan;
  std::vector<std::string> texts;
  json inputs = json::array();
  for (const auto& p : phases) {
    texts.push_back(p.text);
    inputs.push_back(phase_to_json(p));
  }
  req.prompt = fill_template(load_template(AgentRole::Plan, options.template_dir),
                             {{"current_phase", std::to_string(current)},
                              {"phases", join_lines(texts)},
                              {"objectives", options.objectives}});
  req.inputs = {{"phases", inputs}};
  return run_plan(std::move(req), backend);
}

PlanResult plan_signal_directional(const std::vector<SceneDescription>& scenes, const Topology& topology,
                                   PhaseId current, Backend& backend, const OrchestratorOptions& options) {
  if (scenes.empty()) fail(ErrorKind::InvalidArgument, "plan_signal: no scene descriptions");
  AgentRequest req;
  req.role = AgentRole::Plan;
  std::vector<std::string> texts;
  json obs = json::array();
  for (const auto& s : scenes) {
    texts.push_back(s.text);
    obs.push_back(observation_to_json(s.facts));
  }
  json approach_phases = json::object();
  for (const auto& ph : topology.phases)
    for (MovementId m : ph.movements) {
      auto& list = approach_phases[std::to_string(topology.movement(m).from)];
      if (list.is_null()) list = json::array();
      if (std::find(list.begin(), list.end(), json(ph.id)) == list.end()) list.push_back(ph.id);
    }
  req.prompt = fill_template(load_template(AgentRole::Plan, options.template_dir),
                             {{"current_phase", std::to_string(current)},
                              {"phases", join_lines(texts)},
                              {"objectives", options.objectives}});
  req.inputs = {{"scenes", obs}, {"approach_phases", approach_phases}};
  return run_plan(std::move(req), backend);
}

VerifyResult verify_action(std::optional<PhaseId> proposal, const std::string& plan_error,
                           const std::vector<PhaseId>& feasible, PhaseId current, const std::string& phases_text,
                           Backend& backend, const OrchestratorOptions& options) {
  if (feasible.empty()) fail(ErrorKind::InvalidArgument, "verify_action: empty feasible set");
  VerifyResult out;
  std::optional<PhaseId> candidate = proposal;
  std::string why_missing = plan_error.empty() ? "no proposal" : plan_error;
  for (int k = 1; k <= options.n_check; ++k) {
    if (k > 1) {
      AgentRequest req;
      req.role = AgentRole::Check;
      req.prompt = fill_template(load_template(AgentRole::Check, options.template_dir),
                                 {{"current_phase", std::to_string(current)},
                                  {"feasible", phase_set_text(feasible)},
                                  {"proposal", candidate ? std::to_string(*candidate) : "unreadable"},
                                  {"phases", phases_text}});
      req.inputs = {{"proposal", optional_phase(candidate)}, {"feasible", feasible}, {"current", current}};
      std::string error;
      const auto reply = call_agent(backend, req, error);
      candidate.reset();
      if (!reply) {
        why_missing = error;
      } else {
        try {
          candidate = extract_json(*reply).action;
        } catch (const Error& e) {
          why_missing = std::string("check output unusable: ") + e.what();
        }
      }
    }
    VerifyAttempt a;
    a.attempt = k;
    a.proposed = candidate;
    a.feasible = candidate && contains(feasible, *candidate);
    if (a.feasible) a.reason = "in feasible set " + phase_set_text(feasible);
    else if (candidate) a.reason = "phase " + std::to_string(*candidate) + " not in feasible set " + phase_set_text(feasible);
    else a.reason = why_missing;
    out.attempts.push_back(a);
    if (a.feasible) {
      out.accepted = candidate;
      out.accepted_json = json{{"action", *candidate}}.dump();
      break;
    }
  }
  return out;
}

VLMLightController::VLMLightController(std::unique_ptr<Controller> routine, std::unique_ptr<Backend> backend,
                                       std::shared_ptr<const Topology> topology, OrchestratorOptions options)
    : routine_(std::move(routine)),
      backend_(std::move(backend)),
      topology_(std::move(topology)),
      options_(std::move(options)) {
  if (!routine_ || !backend_ || !topology_) fail(ErrorKind::InvalidArgument, "vlmlight controller is incomplete");
  options_.validate();
}

std::vector<SceneDescription> VLMLightController::describe(const WorldState& world, DecisionTrace& trace) {
  std::vector<SceneDescription> out;
  for (const auto& obs : observe_all(world)) {
    SceneDescription d = describe_scene(obs, *topology_);
    if (options_.llm_scene) {
      AgentRequest req;
      req.role = AgentRole::Scene;
      req.prompt = fill_template(load_template(AgentRole::Scene, options_.template_dir),
                                 {{"direction", obs.heading}, {"observation", observation_to_json(obs).dump(2)}});
      req.inputs = {{"observation", observation_to_json(obs)}};
      std::string error;
      if (auto reply = call_agent(*backend_, req, error)) d.text = *reply;
      else trace.notes.push_back(error + "; using the ground-truth template");
    }
    trace.scenes.push_back(d.text);
    out.push_back(std::move(d));
  }
  return out;
}

PhaseId VLMLightController::decide(const DecisionContext& ctx) {
  DecisionTrace t;
  t.t = ctx.now;
  t.controller = name();
  t.feasible = ctx.feasible;
  t.routine_action = routine_->decide(ctx);
  t.final_action = t.routine_action;

  const auto scenes = describe(ctx.world, t);
  std::string note;
  t.mode = select_mode(scenes, *backend_, options_, &note);
  if (!note.empty()) t.notes.push_back(note);
  if (t.mode == ControlMode::RL) {
    trace_ = std::move(t);
    return trace_.final_action;
  }

  const PhaseId current = ctx.signal.current_phase;
  PlanResult plan;
  std::string phases_text;
  if (!options_.ablate_phase) {
    const auto phases = aggregate_phases(scenes, *topology_);
    std::vector<std::string> texts;
    json inputs = json::array();
    for (const auto& p : phases) {
      texts.push_back(p.text);
      inputs.push_back(phase_to_json(p));
    }
    AgentRequest req;
    req.role = AgentRole::Phase;
    std::vector<std::string> scene_texts;
    for (const auto& s : scenes) scene_texts.push_back(s.text);
    req.prompt = fill_template(load_template(AgentRole::Phase, options_.template_dir),
                               {{"scenes", join_lines(scene_texts)}, {"phase_map", phase_map_text(*topology_)}});
    req.inputs = {{"phases", inputs}};
    std::string error;
    if (auto reply = call_agent(*backend_, req, error)) {
      t.phase_text = *reply;
    } else {
      t.notes.push_back(error + "; using the ground-truth phase grouping");
      t.phase_text = join_lines(texts);
    }
    phases_text = t.phase_text;
    plan = plan_signal(phases, current, *backend_, options_);
  } else {
    std::vector<std::string> scene_texts;
    for (const auto& s : scenes) scene_texts.push_back(s.text);
    phases_text = join_lines(scene_texts);
    plan = plan_signal_directional(scenes, *topology_, current, *backend_, options_);
  }
  t.llm_action = plan.action;
  t.rationale = plan.rationale;
  if (!plan.error.empty()) t.notes.push_back(plan.error);

  if (options_.ablate_check) {
    if (plan.action && contains(ctx.feasible, *plan.action)) {
      t.final_action = *plan.action;
      t.accepted = json{{"action", *plan.action}}.dump();
    } else {
      t.fallback = true;
      t.notes.push_back("verification disabled; infeasible or missing plan goes to the fast branch");
    }
  } else {
    auto v = verify_action(plan.action, plan.error, ctx.feasible, current, phases_text, *backend_, options_);
    t.attempts = std::move(v.attempts);
    if (v.accepted) {
      t.final_action = *v.accepted;
      t.accepted = v.accepted_json;
    } else {
      t.fallback = true;
    }
  }
  trace_ = std::move(t);
  return trace_.final_action;
}

std::vector<std::string> controller_kinds() { return {"fixtime", "webster", "maxpressure", "rl", "vlmlight"}; }

std::unique_ptr<Controller> make_controller(const ControllerSpec& spec, std::shared_ptr<const Topology> topology) {
  if (spec.kind == "fixtime") return std::make_unique<FixTimeController>();
  if (spec.kind == "webster") return std::make_unique<WebsterController>();
  if (spec.kind == "maxpressure") return std::make_unique<MaxPressureController>();
  if (spec.kind == "rl") {
    if (!spec.policy) fail(ErrorKind::Config, "controller rl needs a trained policy (--policy)");
    return std::make_unique<RLController>(spec.policy);
  }
  if (spec.kind == "vlmlight") {
    std::unique_ptr<Controller> routine;
    if (spec.policy) routine = std::make_unique<RLController>(spec.policy);
    else routine = std::make_unique<MaxPressureController>();
    auto backend = spec.backend_factory ? spec.backend_factory() : make_backend(spec.backend, topology);
    return std::make_unique<VLMLightController>(std::move(routine), std::move(backend), std::move(topology),
                                                spec.orchestrator);
  }
  fail(ErrorKind::Config, "unknown controller '" + spec.kind + "' (expected fixtime, webster, maxpressure, rl or vlmlight)");
}

void EpisodeOptions::validate() const {
  auto multiple = [](double a, double b) {
    const double k = std::round(a / b);
    return k >= 1.0 && std::abs(k * b - a) < 1e-9;
  };
  if (!(dt > 0.0 && dt <= 1.0)) fail(ErrorKind::InvalidArgument, "dt must lie in (0, 1]");
  if (!(delta_t > 0.0) || !multiple(delta_t, dt))
    fail(ErrorKind::InvalidArgument, "delta-t must be a positive multiple of dt");
  if (!(t_max > 0.0) || !multiple(t_max, delta_t))
    fail(ErrorKind::InvalidArgument, "t-max must be a positive multiple of delta-t");
  if (warmup < 0.0 || warmup >= t_max) fail(ErrorKind::InvalidArgument, "warm-up must lie in [0, t-max)");
}

namespace {

void check_headways(const WorldState& w, std::vector<std::string>& out) {
  const double min_gap = w.options.dynamics.min_gap;
  for (const auto& l : w.lanes) {
    for (size_t i = 1; i < l.vehicles.size(); ++i) {
      const auto& lead = l.vehicles[i - 1];
      const auto& fol = l.vehicles[i];
      const double gap = lead.position - lead.length - fol.position;
      if (gap < min_gap - 1e-9 && out.size() < 100)
        out.push_back("headway " + std::to_string(gap) + " m between vehicles " + std::to_string(lead.id) + " and " +
                      std::to_string(fol.id) + " at t=" + std::to_string(w.clock));
    }
    for (const auto& v : l.vehicles)
      if ((v.speed < 0.0 || v.speed > w.options.dynamics.max_speed + 1e-12) && out.size() < 100)
        out.push_back("speed " + std::to_string(v.speed) + " of vehicle " + std::to_string(v.id));
  }
  if (w.spawned != w.in_world() + w.exited && out.size() < 100)
    out.push_back("conservation broken at t=" + std::to_string(w.clock));
}

}  // namespace

std::vector<std::string> check_signal_history(const std::vector<GreenInterval>& history,
                                              const std::vector<DecisionTrace>& traces) {
  std::vector<std::string> out;
  for (size_t i = 0; i < history.size(); ++i) {
    const auto& g = history[i];
    if (g.end && *g.end - g.start < kMinGreen - 1e-9)
      out.push_back("phase " + std::to_string(g.phase) + " green for " + std::to_string(*g.end - g.start) + " s at t=" +
                    std::to_string(g.start));
    if (i > 0) {
      const auto& prev = history[i - 1];
      if (!prev.end) {
        out.push_back("phase change at t=" + std::to_string(g.start) + " without a yellow interval");
      } else if (std::abs(g.start - *prev.end - kYellow) > 1e-9) {
        out.push_back("yellow of " + std::to_string(g.start - *prev.end) + " s before t=" + std::to_string(g.start));
      }
    }
  }
  for (const auto& t : traces)
    if (!contains(t.feasible, t.final_action))
      out.push_back("executed phase " + std::to_string(t.final_action) + " outside the feasible set at t=" +
                    std::to_string(t.t));
  return out;
}

EpisodeResult run_episode(const Scenario& scenario, const ControllerSpec& spec, std::uint64_t seed,
                          const EpisodeOptions& options) {
  options.validate();
  auto topo = std::make_shared<const Topology>(scenario.topology);
  DemandProfile demand = scenario.demand;
  demand.horizon = options.t_max;
  WorldOptions wopts;
  wopts.log_events = options.log_events;
  wopts.emergency_start = options.warmup;
  auto world = std::make_shared<WorldState>(make_world(topo, demand, seed, wopts));
  SignalState signal = initial_signal();
  auto controller = make_controller(spec, topo);
  auto* tracing = dynamic_cast<TracingController*>(controller.get());
  const int phases = topo->phase_count();

  EpisodeResult res;
  res.seed = seed;
  const auto ticks = static_cast<long>(std::llround(options.t_max / options.delta_t));
  const auto steps = static_cast<long>(std::llround(options.delta_t / options.dt));
  double last = 0.0;
  for (long k = 0; k < ticks; ++k) {
    const double now = static_cast<double>(k) * options.delta_t;
    const auto feasible = feasible_actions(signal, phases);
    DecisionContext ctx{*world, signal, feasible, now, last};
    const PhaseId action = controller->decide(ctx);
    DecisionTrace trace;
    if (tracing) {
      trace = tracing->last_trace();
    } else {
      trace.t = now;
      trace.controller = controller->name();
      trace.feasible = feasible;
      trace.routine_action = action;
      trace.final_action = action;
    }
    if (trace.final_action != action) fail(ErrorKind::Internal, "trace disagrees with the executed action");
    if (!contains(feasible, action))
      fail(ErrorKind::Internal, controller->name() + " chose infeasible phase " + std::to_string(action) +
                                    " at t=" + std::to_string(now));
    res.traces.push_back(std::move(trace));
    signal = apply_action(signal, phases, action);
    last = now;
    for (long s = 0; s < steps; ++s) {
      advance(*world, signal, options.dt);
      signal = tick_signal(signal, options.dt);
      if (options.check_invariants && world->clock > options.settle_in + 1e-9) check_headways(*world, res.violations);
    }
  }
  if (options.check_invariants) {
    auto more = check_signal_history(signal.history, res.traces);
    res.violations.insert(res.violations.end(), more.begin(), more.end());
  }
  res.records = collect_records(*world);
  res.signal_history = signal.history;
  res.events = std::move(world->events);
  world->events.clear();
  res.spawned = world->spawned;
  res.exited = world->exited;
  res.in_world = world->in_world();
  res.world = world;
  res.signal = signal;
  return res;
}

}  // namespace vlmlight
