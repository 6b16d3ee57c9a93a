#include "agents/backend.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "agents/http_backend.hpp"
#include "embedded_assets.hpp"
#include "error.hpp"

namespace vlmlight {

using nlohmann::json;

std::string_view to_string(AgentRole role) {
  switch (role) {
    case AgentRole::Scene: return "scene";
    case AgentRole::ModeSelector: return "mode_selector";
    case AgentRole::Phase: return "phase";
    case AgentRole::Plan: return "plan";
    case AgentRole::Check: return "check";
  }
  return "scene";
}

AgentRole parse_agent_role(std::string_view text) {
  for (AgentRole r : {AgentRole::Scene, AgentRole::ModeSelector, AgentRole::Phase, AgentRole::Plan, AgentRole::Check})
    if (to_string(r) == text) return r;
  fail(ErrorKind::InvalidArgument, "unknown agent role '" + std::string(text) + "'");
}

std::vector<std::string> PromptTemplate::placeholders() const {
  std::vector<std::string> out;
  size_t pos = 0;
  while ((pos = text.find("{{", pos)) != std::string::npos) {
    const size_t end = text.find("}}", pos + 2);
    if (end == std::string::npos) break;
    std::string name = text.substr(pos + 2, end - pos - 2);
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
    pos = end + 2;
  }
  return out;
}

PromptTemplate load_template(AgentRole role, const std::string& dir) {
  const std::string file = std::string(to_string(role)) + ".txt";
  PromptTemplate t;
  t.role = role;
  if (!dir.empty()) {
    std::ifstream in(dir + "/" + file, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot read prompt template '" + dir + "/" + file + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    t.text = ss.str();
    return t;
  }
  const std::string* text = find_embedded_asset("assets/prompts/" + file);
  if (!text) fail(ErrorKind::Internal, "missing built-in prompt template " + file);
  t.text = *text;
  return t;
}

std::string fill_template(const PromptTemplate& tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.text.size());
  size_t pos = 0;
  while (true) {
    const size_t open = tmpl.text.find("{{", pos);
    if (open == std::string::npos) break;
    const size_t close = tmpl.text.find("}}", open + 2);
    if (close == std::string::npos) break;
    const std::string name = tmpl.text.substr(open + 2, close - open - 2);
    auto it = values.find(name);
    if (it == values.end())
      fail(ErrorKind::InvalidArgument,
           "prompt template '" + std::string(to_string(tmpl.role)) + "' has no value for {{" + name + "}}");
    out.append(tmpl.text, pos, open - pos);
    out += it->second;
    pos = close + 2;
  }
  out.append(tmpl.text, pos, std::string::npos);
  return out;
}

ActionObject extract_json(std::string_view text) {
  bool saw_object = false;
  std::string last_problem = "no object found";
  for (size_t start = text.find('{'); start != std::string_view::npos; start = text.find('{', start + 1)) {
    // Scan for the matching close brace, skipping string contents.
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    size_t end = std::string_view::npos;
    for (size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') ++depth;
      else if (c == '}' && --depth == 0) {
        end = i;
        break;
      }
    }
    if (end == std::string_view::npos) continue;
    const auto candidate = text.substr(start, end - start + 1);
    json doc = json::parse(candidate.begin(), candidate.end(), nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) continue;
    saw_object = true;
    if (!doc.contains("action")) {
      last_problem = "missing action";
      start = end;
      continue;
    }
    const json& a = doc["action"];
    if (!a.is_number_integer() ||
        a.get<long long>() < std::numeric_limits<int>::min() || a.get<long long>() > std::numeric_limits<int>::max()) {
      last_problem = "action must be an integer";
      start = end;
      continue;
    }
    return {a.get<int>(), std::move(doc)};
  }
  fail(ErrorKind::Parse, saw_object ? last_problem : "no object found");
}

bool critical_condition(const std::vector<SceneObservation>& scenes) {
  for (const auto& s : scenes)
    if (s.has_emergency() || s.high_congestion_lanes() >= 2) return true;
  return false;
}

namespace {

struct EmergencyPick {
  double distance = std::numeric_limits<double>::infinity();
  double waited = -1.0;
  int key = std::numeric_limits<int>::max();  // phase or approach id
  std::string cls;
  bool found = false;

  void offer(const EmergencySighting& e, int k) {
    const bool better = !found || e.distance < distance ||
                        (e.distance == distance && (e.waited > waited || (e.waited == waited && k < key)));
    if (!better) return;
    found = true;
    distance = e.distance;
    waited = e.waited;
    key = k;
    cls = std::string(to_string(e.cls));
  }
};

std::string fmt1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

LaneObservation lane_from_json(const json& j) {
  LaneObservation l;
  l.lane = j.at("lane").get<int>();
  l.movement = j.at("movement").get<int>();
  l.turn = parse_turn_kind(j.at("turn").get<std::string>());
  l.vehicles = j.at("vehicles").get<int>();
  l.queued = j.at("queued").get<int>();
  l.occupancy = j.at("occupancy").get<double>();
  l.congestion = congestion_level(l.occupancy);
  for (const auto& e : j.at("emergencies"))
    l.emergencies.push_back({e.at("vehicle").get<VehicleId>(), parse_vehicle_class(e.at("class").get<std::string>()),
                             e.at("distance_m").get<double>(), e.at("speed_mps").get<double>(),
                             e.at("waited_s").get<double>()});
  return l;
}

template <class F>
auto schema_guard(AgentRole role, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidArgument,
         "scripted " + std::string(to_string(role)) + " agent: inputs do not match the role schema (" + e.what() + ")");
  }
}

}  // namespace

PlanChoice plan_rule(const std::vector<PhaseDescription>& phases) {
  if (phases.empty()) fail(ErrorKind::InvalidArgument, "plan_rule: no phase descriptions");
  EmergencyPick pick;
  for (const auto& p : phases)
    for (const auto& l : p.lanes)
      for (const auto& e : l.emergencies) pick.offer(e, p.phase);
  if (pick.found)
    return {pick.key, "Phase " + std::to_string(pick.key) + " serves the " + pick.cls + " nearest its stop line (" +
                          fmt1(pick.distance) + " m), so it is given right of way."};
  PhaseId best = phases.front().phase;
  int best_q = -1;
  for (const auto& p : phases) {
    int q = 0;
    for (const auto& l : p.lanes) q += l.queued;
    if (q > best_q || (q == best_q && p.phase < best)) {
      best = p.phase;
      best_q = q;
    }
  }
  return {best, "No emergency vehicle is present; phase " + std::to_string(best) + " holds the longest queue (" +
                    std::to_string(best_q) + " vehicles)."};
}

PlanChoice plan_rule_directional(const std::vector<SceneObservation>& scenes,
                                 const std::map<ApproachId, std::vector<PhaseId>>& approach_phases) {
  if (scenes.empty()) fail(ErrorKind::InvalidArgument, "plan_rule_directional: no scene descriptions");
  auto first_phase = [&](ApproachId a) {
    auto it = approach_phases.find(a);
    if (it == approach_phases.end() || it->second.empty())
      fail(ErrorKind::InvalidArgument, "plan_rule_directional: approach " + std::to_string(a) + " has no phase");
    return *std::min_element(it->second.begin(), it->second.end());
  };
  EmergencyPick pick;
  for (const auto& s : scenes)
    for (const auto& l : s.lanes)
      for (const auto& e : l.emergencies) pick.offer(e, s.approach);
  if (pick.found) {
    const PhaseId p = first_phase(pick.key);
    return {p, "The " + pick.cls + " nearest its stop line is on approach " + std::to_string(pick.key) +
                   "; phase " + std::to_string(p) + " serves that approach."};
  }
  ApproachId best = scenes.front().approach;
  int best_q = -1;
  for (const auto& s : scenes) {
    int q = 0;
    for (const auto& l : s.lanes) q += l.queued;
    if (q > best_q || (q == best_q && s.approach < best)) {
      best = s.approach;
      best_q = q;
    }
  }
  const PhaseId p = first_phase(best);
  return {p, "No emergency vehicle is present; approach " + std::to_string(best) +
                 " holds the longest queue and phase " + std::to_string(p) + " serves it."};
}

PhaseId check_rule(std::optional<PhaseId> proposal, const std::vector<PhaseId>& feasible, PhaseId current) {
  if (feasible.empty()) fail(ErrorKind::InvalidArgument, "check_rule: empty feasible set");
  auto has = [&](PhaseId p) { return std::find(feasible.begin(), feasible.end(), p) != feasible.end(); };
  if (proposal && has(*proposal)) return *proposal;
  if (has(current)) return current;
  return feasible.front();
}

json phase_to_json(const PhaseDescription& p) {
  json lanes = json::array();
  for (size_t i = 0; i < p.lanes.size(); ++i) {
    json l = lane_to_json(p.lanes[i]);
    l["approach"] = i < p.lane_approach.size() ? p.lane_approach[i] : 0;
    lanes.push_back(std::move(l));
  }
  return {{"phase", p.phase}, {"movements", p.movements}, {"emergency", p.emergency}, {"text", p.text},
          {"lanes", lanes}};
}

PhaseDescription phase_from_json(const json& j) {
  PhaseDescription p;
  p.phase = j.at("phase").get<int>();
  p.movements = j.at("movements").get<std::vector<int>>();
  p.emergency = j.at("emergency").get<bool>();
  p.text = j.at("text").get<std::string>();
  for (const auto& l : j.at("lanes")) {
    p.lanes.push_back(lane_from_json(l));
    p.lane_approach.push_back(l.at("approach").get<int>());
  }
  return p;
}

SceneObservation observation_from_json(const json& j) {
  SceneObservation o;
  o.approach = j.at("approach").get<int>();
  o.heading = j.at("heading").get<std::string>();
  for (const auto& l : j.at("lanes")) o.lanes.push_back(lane_from_json(l));
  return o;
}

ScriptedBackend::ScriptedBackend(std::shared_ptr<const Topology> topology) : topology_(std::move(topology)) {
  if (!topology_) fail(ErrorKind::InvalidArgument, "scripted backend needs a topology");
}

std::string ScriptedBackend::complete(const AgentRequest& request) {
  const json& in = request.inputs;
  return schema_guard(request.role, [&]() -> std::string {
    switch (request.role) {
      case AgentRole::Scene:
        return describe_scene(observation_from_json(in.at("observation")), *topology_).text;
      case AgentRole::ModeSelector: {
        std::vector<SceneObservation> scenes;
        for (const auto& s : in.at("scenes")) scenes.push_back(observation_from_json(s));
        return critical_condition(scenes) ? "DELIBERATIVE" : "RL";
      }
      case AgentRole::Phase: {
        std::string out;
        for (const auto& p : in.at("phases")) out += "Phase " + std::to_string(p.at("phase").get<int>()) + ": " +
                                                     p.at("text").get<std::string>() + "\n";
        return out;
      }
      case AgentRole::Plan: {
        PlanChoice c;
        if (in.contains("phases")) {
          std::vector<PhaseDescription> phases;
          for (const auto& p : in.at("phases")) phases.push_back(phase_from_json(p));
          c = plan_rule(phases);
        } else {
          std::vector<SceneObservation> scenes;
          for (const auto& s : in.at("scenes")) scenes.push_back(observation_from_json(s));
          std::map<ApproachId, std::vector<PhaseId>> ap;
          for (const auto& [k, v] : in.at("approach_phases").items()) ap[std::stoi(k)] = v.get<std::vector<int>>();
          c = plan_rule_directional(scenes, ap);
        }
        return json{{"action", c.phase}, {"rationale", c.rationale}}.dump();
      }
      case AgentRole::Check: {
        std::optional<PhaseId> proposal;
        if (!in.at("proposal").is_null()) proposal = in.at("proposal").get<int>();
        const auto feasible = in.at("feasible").get<std::vector<int>>();
        const PhaseId current = in.at("current").get<int>();
        const PhaseId a = check_rule(proposal, feasible, current);
        const bool kept = proposal && *proposal == a;
        return json{{"action", a},
                    {"reason", kept ? "The proposal is in the feasible set."
                                    : "The proposal is not feasible; keep the current assignment instead."}}
            .dump();
      }
    }
    fail(ErrorKind::Internal, "unhandled agent role");
  });
}

std::string InvalidBackend::complete(const AgentRequest& request) {
  if (request.role == AgentRole::ModeSelector) return "DELIBERATIVE";
  return "I am unable to recommend a phase at this time.";
}

BackendConfig BackendConfig::from_env(std::string kind) {
  BackendConfig c;
  c.kind = std::move(kind);
  if (const char* v = std::getenv("LLM_API_BASE")) c.endpoint = v;
  if (const char* v = std::getenv("LLM_API_KEY")) c.api_key = v;
  if (const char* v = std::getenv("LLM_MODEL")) c.model = v;
  return c;
}

void BackendConfig::validate() const {
  if (kind == "scripted" || kind == "invalid") return;
  if (kind != "http") fail(ErrorKind::Config, "unknown backend kind '" + kind + "' (expected scripted or http)");
  if (endpoint.empty()) fail(ErrorKind::Config, "http backend needs an endpoint (set LLM_API_BASE)");
  if (model.empty()) fail(ErrorKind::Config, "http backend needs a model name (set LLM_MODEL)");
  if (!(timeout_s > 0.0)) fail(ErrorKind::Config, "http backend timeout must be positive");
  if (max_retries < 1) fail(ErrorKind::Config, "http backend needs at least one attempt per call");
}

std::unique_ptr<Backend> make_backend(const BackendConfig& config, std::shared_ptr<const Topology> topology) {
  config.validate();
  if (config.kind == "scripted") return std::make_unique<ScriptedBackend>(std::move(topology));
  if (config.kind == "invalid") return std::make_unique<InvalidBackend>();
  return std::make_unique<HttpBackend>(config);
}

}  // namespace vlmlight
