#include "topology.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "embedded_assets.hpp"
#include "error.hpp"

namespace vlmlight {

using nlohmann::json;

std::string_view to_string(TurnKind kind) {
  switch (kind) {
    case TurnKind::Straight: return "straight";
    case TurnKind::Left: return "left";
    case TurnKind::Right: return "right";
  }
  return "straight";
}

TurnKind parse_turn_kind(std::string_view text) {
  if (text == "straight") return TurnKind::Straight;
  if (text == "left") return TurnKind::Left;
  if (text == "right") return TurnKind::Right;
  fail(ErrorKind::Config, "unknown turn kind '" + std::string(text) + "'");
}

const Approach& Topology::approach(ApproachId id) const {
  for (const auto& a : approaches)
    if (a.id == id) return a;
  fail(ErrorKind::InvalidArgument, "unknown approach " + std::to_string(id));
}

const Movement& Topology::movement(MovementId id) const {
  if (!has_movement(id)) fail(ErrorKind::InvalidArgument, "unknown movement " + std::to_string(id));
  return movements[static_cast<size_t>(id - 1)];
}

const Phase& Topology::phase(PhaseId id) const {
  if (id < 1 || id > phase_count()) fail(ErrorKind::InvalidArgument, "unknown phase " + std::to_string(id));
  return phases[static_cast<size_t>(id - 1)];
}

bool Topology::phase_contains(PhaseId phase_id, MovementId movement_id) const {
  const auto& ms = phase(phase_id).movements;
  return std::find(ms.begin(), ms.end(), movement_id) != ms.end();
}

bool Topology::conflicting(MovementId a, MovementId b) const {
  if (a > b) std::swap(a, b);
  return conflicts.count({a, b}) > 0;
}

MovementId Topology::movement_of_lane(ApproachId approach_id, int lane) const {
  for (const auto& m : movements)
    if (m.from == approach_id && std::find(m.lanes.begin(), m.lanes.end(), lane) != m.lanes.end()) return m.id;
  return 0;
}

std::map<PhaseId, std::vector<MovementId>> Topology::phase_movement_map() const {
  std::map<PhaseId, std::vector<MovementId>> out;
  for (const auto& p : phases) out[p.id] = p.movements;
  return out;
}

namespace {

json parse_json(std::string_view text) {
  json doc = json::parse(text.begin(), text.end(), nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) fail(ErrorKind::Parse, "invalid JSON document");
  return doc;
}

template <typename T>
T require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) fail(ErrorKind::Parse, where + ": missing field '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::Parse, where + ": field '" + key + "' has the wrong type");
  }
}

template <typename T>
T optional_field(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  return require<T>(obj, key, where);
}

Topology topology_from_json(const json& doc) {
  if (!doc.is_object()) fail(ErrorKind::Parse, "topology must be a JSON object");
  Topology topo;
  topo.name = optional_field<std::string>(doc, "name", "custom", "topology");

  const json approaches = require<json>(doc, "approaches", "topology");
  for (const auto& a : approaches) {
    Approach ap;
    ap.id = require<int>(a, "id", "approach");
    ap.heading = require<std::string>(a, "heading", "approach");
    ap.lanes_in = require<int>(a, "lanes_in", "approach");
    ap.lanes_out = require<int>(a, "lanes_out", "approach");
    ap.length_in = optional_field<double>(a, "length_in", 150.0, "approach");
    ap.length_out = optional_field<double>(a, "length_out", 100.0, "approach");
    topo.approaches.push_back(std::move(ap));
  }
  const json movements = require<json>(doc, "movements", "topology");
  for (const auto& m : movements) {
    Movement mv;
    mv.id = require<int>(m, "id", "movement");
    mv.from = require<int>(m, "from", "movement");
    mv.to = require<int>(m, "to", "movement");
    mv.turn = parse_turn_kind(require<std::string>(m, "turn", "movement"));
    mv.lanes = require<std::vector<int>>(m, "lanes", "movement");
    topo.movements.push_back(std::move(mv));
  }
  const json phases = require<json>(doc, "phases", "topology");
  for (const auto& p : phases) {
    Phase ph;
    ph.id = require<int>(p, "id", "phase");
    ph.movements = require<std::vector<int>>(p, "movements", "phase");
    topo.phases.push_back(std::move(ph));
  }
  if (doc.contains("conflicts")) {
    for (const auto& pair : doc.at("conflicts")) {
      if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_integer() || !pair[1].is_number_integer())
        fail(ErrorKind::Parse, "conflicts: each entry must be a pair of movement ids");
      int a = pair[0].get<int>();
      int b = pair[1].get<int>();
      if (a > b) std::swap(a, b);
      topo.conflicts.insert({a, b});
    }
  }
  return topo;
}

void validate(Topology& topo) {
  auto by_id = [](const auto& x, const auto& y) { return x.id < y.id; };
  std::sort(topo.approaches.begin(), topo.approaches.end(), by_id);
  std::sort(topo.movements.begin(), topo.movements.end(), by_id);
  std::sort(topo.phases.begin(), topo.phases.end(), by_id);

  if (topo.approaches.empty()) fail(ErrorKind::Config, "topology has no approaches");
  for (size_t i = 0; i < topo.approaches.size(); ++i) {
    const auto& a = topo.approaches[i];
    if (a.id != static_cast<int>(i) + 1) fail(ErrorKind::Config, "approach ids must be contiguous from 1");
    if (a.lanes_in < 0 || a.lanes_out < 0) fail(ErrorKind::Config, "negative lane count on approach " + std::to_string(a.id));
    if (a.length_in <= 0.0 || a.length_out <= 0.0)
      fail(ErrorKind::Config, "approach " + std::to_string(a.id) + " needs positive lengths");
  }

  const int m_count = topo.movement_count();
  if (m_count == 0) fail(ErrorKind::Config, "topology has no movements");
  if (m_count > kMaxMovements) fail(ErrorKind::Config, "at most 12 movements are supported");
  std::set<std::pair<int, int>> used_lanes;
  for (size_t i = 0; i < topo.movements.size(); ++i) {
    const auto& m = topo.movements[i];
    if (m.id != static_cast<int>(i) + 1) fail(ErrorKind::Config, "movement ids must be contiguous from 1");
    if (m.from < 1 || m.from > static_cast<int>(topo.approaches.size()) || m.to < 1 ||
        m.to > static_cast<int>(topo.approaches.size()))
      fail(ErrorKind::Config, "movement " + std::to_string(m.id) + " references an unknown approach");
    if (m.lanes.empty()) fail(ErrorKind::Config, "movement " + std::to_string(m.id) + " has no lanes");
    const auto& src = topo.approach(m.from);
    if (topo.approach(m.to).lanes_out < 1)
      fail(ErrorKind::Config, "movement " + std::to_string(m.id) + " leads to an approach without outgoing lanes");
    for (int lane : m.lanes) {
      if (lane < 0 || lane >= src.lanes_in)
        fail(ErrorKind::Config, "movement " + std::to_string(m.id) + " uses lane " + std::to_string(lane) +
                                    " outside approach " + std::to_string(m.from));
      if (!used_lanes.insert({m.from, lane}).second)
        fail(ErrorKind::Config, "incoming lane " + std::to_string(lane) + " of approach " + std::to_string(m.from) +
                                    " is assigned to two movements");
    }
  }
  for (const auto& a : topo.approaches)
    for (int lane = 0; lane < a.lanes_in; ++lane)
      if (!used_lanes.count({a.id, lane}))
        fail(ErrorKind::Config, "incoming lane " + std::to_string(lane) + " of approach " + std::to_string(a.id) +
                                    " has no movement");

  for (const auto& [a, b] : topo.conflicts)
    if (!topo.has_movement(a) || !topo.has_movement(b)) fail(ErrorKind::Config, "conflict table: unknown movement");

  if (topo.phases.empty()) fail(ErrorKind::Config, "topology has no phases");
  std::set<int> covered;
  for (size_t i = 0; i < topo.phases.size(); ++i) {
    const auto& p = topo.phases[i];
    if (p.id != static_cast<int>(i) + 1) fail(ErrorKind::Config, "phase ids must be contiguous from 1");
    if (p.movements.empty()) fail(ErrorKind::Config, "phase " + std::to_string(p.id) + " is empty");
    for (int m : p.movements) {
      if (!topo.has_movement(m))
        fail(ErrorKind::Config, "phase " + std::to_string(p.id) + " references unknown movement " + std::to_string(m));
      covered.insert(m);
    }
    for (size_t x = 0; x < p.movements.size(); ++x)
      for (size_t y = x + 1; y < p.movements.size(); ++y)
        if (topo.conflicting(p.movements[x], p.movements[y]))
          fail(ErrorKind::Config, "conflicting movements " + std::to_string(p.movements[x]) + " and " +
                                      std::to_string(p.movements[y]) + " share phase " + std::to_string(p.id));
  }
  for (const auto& m : topo.movements)
    if (!covered.count(m.id)) fail(ErrorKind::Config, "movement " + std::to_string(m.id) + " is in no phase");
}

DemandProfile demand_from_json(const json& doc, const Topology& topo) {
  if (!doc.is_object()) fail(ErrorKind::Parse, "demand must be a JSON object");
  DemandProfile profile;
  profile.horizon = optional_field<double>(doc, "horizon", 600.0, "demand");
  if (!(profile.horizon > 0.0)) fail(ErrorKind::Config, "demand horizon must be positive");
  const json approaches = require<json>(doc, "approaches", "demand");
  for (const auto& a : approaches) {
    ApproachDemand d;
    d.approach = require<int>(a, "approach", "demand approach");
    topo.approach(d.approach);
    d.rate_mean = require<double>(a, "rate_mean", "demand approach");
    d.rate_std = optional_field<double>(a, "rate_std", 0.0, "demand approach");
    d.rate_min = optional_field<double>(a, "rate_min", d.rate_mean, "demand approach");
    d.rate_max = optional_field<double>(a, "rate_max", d.rate_mean, "demand approach");
    d.emergency_count = optional_field<int>(a, "emergency_count", 0, "demand approach");
    if (d.rate_mean < 0.0 || d.rate_std < 0.0 || d.emergency_count < 0)
      fail(ErrorKind::Config, "demand for approach " + std::to_string(d.approach) + " must be non-negative");
    double total = 0.0;
    const json turning = require<json>(a, "turning", "demand approach");
    if (!turning.is_object()) fail(ErrorKind::Parse, "turning ratios must be an object");
    for (const auto& [key, value] : turning.items()) {
      int mid = 0;
      try {
        mid = std::stoi(key);
      } catch (const std::exception&) {
        fail(ErrorKind::Parse, "turning ratios must be keyed by movement id");
      }
      if (!topo.has_movement(mid) || topo.movement(mid).from != d.approach)
        fail(ErrorKind::Config, "turning ratio for movement " + key + " which does not leave approach " +
                                    std::to_string(d.approach));
      if (!value.is_number() || value.get<double>() < 0.0)
        fail(ErrorKind::Config, "turning ratio for movement " + key + " must be a non-negative number");
      d.turning[mid] = value.get<double>();
      total += value.get<double>();
    }
    if (std::abs(total - 1.0) > 1e-6)
      fail(ErrorKind::Config, "turning ratios of approach " + std::to_string(d.approach) + " must sum to 1");
    profile.approaches.push_back(std::move(d));
  }
  return profile;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

const ApproachDemand* DemandProfile::find(ApproachId id) const {
  for (const auto& a : approaches)
    if (a.approach == id) return &a;
  return nullptr;
}

Topology load_topology(std::string_view config_text) {
  Topology topo = topology_from_json(parse_json(config_text));
  validate(topo);
  return topo;
}

DemandProfile load_demand(std::string_view config_text, const Topology& topology) {
  return demand_from_json(parse_json(config_text), topology);
}

Scenario load_scenario(std::string_view config_text) {
  json doc = parse_json(config_text);
  if (!doc.is_object() || !doc.contains("topology")) fail(ErrorKind::Parse, "scenario: missing field 'topology'");
  Scenario sc;
  sc.topology = topology_from_json(doc.at("topology"));
  validate(sc.topology);
  sc.name = optional_field<std::string>(doc, "name", sc.topology.name, "scenario");
  if (doc.contains("demand")) sc.demand = demand_from_json(doc.at("demand"), sc.topology);
  return sc;
}

Scenario load_scenario_file(const std::string& path) { return load_scenario(read_file(path)); }

std::vector<std::string> builtin_scenario_names() { return {"songdo", "yaumatei", "massy"}; }

std::string builtin_scenario_text(std::string_view name) {
  const std::string* text = find_embedded_asset("scenarios/" + std::string(name) + ".json");
  if (!text) fail(ErrorKind::InvalidArgument, "unknown built-in scenario '" + std::string(name) + "'");
  return *text;
}

Scenario builtin_scenario(std::string_view name) { return load_scenario(builtin_scenario_text(name)); }

Scenario resolve_scenario(const std::string& name_or_path) {
  for (const auto& n : builtin_scenario_names())
    if (n == name_or_path) return builtin_scenario(n);
  if (!std::filesystem::exists(name_or_path))
    fail(ErrorKind::InvalidArgument, "'" + name_or_path + "' is neither a built-in scenario nor a readable file");
  return load_scenario_file(name_or_path);
}

}  // namespace vlmlight
