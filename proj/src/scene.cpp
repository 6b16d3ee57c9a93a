#include "scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "error.hpp"

namespace vlmlight {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string class_label(VehicleClass cls) {
  switch (cls) {
    case VehicleClass::Police: return "police car";
    case VehicleClass::Ambulance: return "ambulance";
    case VehicleClass::FireTruck: return "fire truck";
    case VehicleClass::Regular: break;
  }
  return "vehicle";
}

std::string turn_label(TurnKind t) {
  switch (t) {
    case TurnKind::Left: return "left-turn";
    case TurnKind::Right: return "right-turn";
    case TurnKind::Straight: break;
  }
  return "straight";
}

std::string lane_sentence(const LaneObservation& l, const Topology& topo) {
  const auto& mv = topo.movement(l.movement);
  std::string s = "Lane " + std::to_string(l.lane + 1) + " (" + turn_label(l.turn) + ", movement " +
                  std::to_string(l.movement) + " toward " + topo.approach(mv.to).heading + "): ";
  if (l.vehicles == 0) return s + "empty, congestion low.";
  s += std::to_string(l.vehicles) + (l.vehicles == 1 ? " vehicle, " : " vehicles, ") + std::to_string(l.queued) +
       " queued, occupancy " + fixed(l.occupancy, 2) + ", congestion " + std::string(to_string(l.congestion)) + ".";
  return s;
}

std::string emergency_sentence(const std::vector<std::pair<int, EmergencySighting>>& seen) {
  if (seen.empty()) return "No emergency or special vehicles.";
  std::string s = "Emergency vehicles present: ";
  for (size_t i = 0; i < seen.size(); ++i) {
    const auto& [lane, e] = seen[i];
    if (i) s += "; ";
    s += class_label(e.cls) + " in lane " + std::to_string(lane + 1) + ", " + fixed(e.distance, 1) +
         " m from the stop line at " + fixed(e.speed, 1) + " m/s";
  }
  return s + ".";
}

}  // namespace

std::string_view to_string(Congestion level) {
  switch (level) {
    case Congestion::Low: return "low";
    case Congestion::Medium: return "medium";
    case Congestion::High: return "high";
  }
  return "low";
}

Congestion congestion_level(double occupancy) {
  if (occupancy < kCongestionMedium) return Congestion::Low;
  if (occupancy < kCongestionHigh) return Congestion::Medium;
  return Congestion::High;
}

bool SceneObservation::has_emergency() const {
  return std::any_of(lanes.begin(), lanes.end(), [](const auto& l) { return !l.emergencies.empty(); });
}

int SceneObservation::high_congestion_lanes() const {
  return static_cast<int>(
      std::count_if(lanes.begin(), lanes.end(), [](const auto& l) { return l.congestion == Congestion::High; }));
}

SceneObservation observe_approach(const WorldState& world, ApproachId approach) {
  const auto& topo = *world.topology;
  const auto& ap = topo.approach(approach);
  SceneObservation obs;
  obs.approach = ap.id;
  obs.heading = ap.heading;
  const auto& ids = world.incoming_lane_ids[static_cast<size_t>(approach - 1)];
  const double halt = world.options.dynamics.halt_speed;
  for (size_t i = 0; i < ids.size(); ++i) {
    const Lane& lane = world.lane(ids[i]);
    LaneObservation lo;
    lo.lane = static_cast<int>(i);
    lo.movement = lane.movement;
    lo.turn = topo.movement(lane.movement).turn;
    double covered = 0.0;
    for (const auto& v : lane.vehicles) {
      ++lo.vehicles;
      if (v.speed < halt) ++lo.queued;
      const double back = std::max(0.0, v.position - v.length);
      covered += std::max(0.0, std::min(lane.length, v.position) - back);
      if (is_emergency(v.cls))
        lo.emergencies.push_back({v.id, v.cls, std::max(0.0, lane.length - v.position), v.speed, v.accumulated_wait});
    }
    lo.occupancy = covered / lane.length;
    lo.congestion = congestion_level(lo.occupancy);
    obs.lanes.push_back(std::move(lo));
  }
  return obs;
}

std::vector<SceneObservation> observe_all(const WorldState& world) {
  std::vector<SceneObservation> out;
  for (const auto& a : world.topology->approaches)
    if (a.lanes_in > 0) out.push_back(observe_approach(world, a.id));
  return out;
}

SceneDescription describe_scene(const SceneObservation& obs, const Topology& topology) {
  SceneDescription d;
  d.approach = obs.approach;
  d.heading = obs.heading;
  d.facts = obs;
  int vehicles = 0, queued = 0;
  std::vector<std::pair<int, EmergencySighting>> seen;
  for (const auto& l : obs.lanes) {
    vehicles += l.vehicles;
    queued += l.queued;
    for (const auto& e : l.emergencies) seen.emplace_back(l.lane, e);
  }
  std::string text = "Approach " + obs.heading + " (" + std::to_string(obs.lanes.size()) + " incoming lanes): ";
  if (vehicles == 0) {
    text += "no vehicles. ";
  } else {
    text += std::to_string(vehicles) + (vehicles == 1 ? " vehicle, " : " vehicles, ") + std::to_string(queued) + " queued. ";
    for (const auto& l : obs.lanes) text += lane_sentence(l, topology) + " ";
  }
  text += emergency_sentence(seen);
  d.text = std::move(text);
  return d;
}

std::vector<PhaseDescription> aggregate_phases(const std::vector<SceneDescription>& descriptions,
                                               const Topology& topology) {
  std::map<ApproachId, const SceneDescription*> by_approach;
  for (const auto& d : descriptions) by_approach[d.approach] = &d;
  std::vector<PhaseDescription> out;
  for (const auto& ph : topology.phases) {
    PhaseDescription pd;
    pd.phase = ph.id;
    pd.movements = ph.movements;
    int vehicles = 0, queued = 0;
    std::vector<std::pair<int, EmergencySighting>> seen;
    std::string lanes_text;
    for (MovementId m : ph.movements) {
      const auto& mv = topology.movement(m);
      auto it = by_approach.find(mv.from);
      if (it == by_approach.end())
        fail(ErrorKind::InvalidArgument, "aggregate_phases: no description for approach " + std::to_string(mv.from));
      for (const auto& l : it->second->facts.lanes) {
        if (l.movement != m) continue;
        pd.lanes.push_back(l);
        pd.lane_approach.push_back(mv.from);
        vehicles += l.vehicles;
        queued += l.queued;
        for (const auto& e : l.emergencies) seen.emplace_back(l.lane, e);
        lanes_text += " " + topology.approach(mv.from).heading + " " + lane_sentence(l, topology);
      }
    }
    pd.emergency = !seen.empty();
    std::string movements;
    for (size_t i = 0; i < ph.movements.size(); ++i) movements += (i ? ", " : "") + std::to_string(ph.movements[i]);
    std::string em = "No emergency or special vehicles.";
    if (!seen.empty()) {
      em = "Emergency vehicles present: ";
      for (size_t i = 0; i < seen.size(); ++i) {
        if (i) em += "; ";
        em += class_label(seen[i].second.cls) + " " + fixed(seen[i].second.distance, 1) + " m from the stop line";
      }
      em += ".";
    }
    pd.text = "Phase " + std::to_string(ph.id) + " (movements " + movements + "): " + std::to_string(vehicles) +
              (vehicles == 1 ? " vehicle, " : " vehicles, ") + std::to_string(queued) + " queued." + lanes_text + " " + em;
    out.push_back(std::move(pd));
  }
  return out;
}

nlohmann::json lane_to_json(const LaneObservation& l) {
  nlohmann::json em = nlohmann::json::array();
  for (const auto& e : l.emergencies)
    em.push_back({{"vehicle", e.vehicle},
                  {"class", std::string(to_string(e.cls))},
                  {"distance_m", e.distance},
                  {"speed_mps", e.speed},
                  {"waited_s", e.waited}});
  return {{"lane", l.lane},
          {"movement", l.movement},
          {"turn", std::string(to_string(l.turn))},
          {"vehicles", l.vehicles},
          {"queued", l.queued},
          {"occupancy", l.occupancy},
          {"congestion", std::string(to_string(l.congestion))},
          {"emergencies", em}};
}

nlohmann::json observation_to_json(const SceneObservation& obs) {
  nlohmann::json lanes = nlohmann::json::array();
  for (const auto& l : obs.lanes) lanes.push_back(lane_to_json(l));
  return {{"approach", obs.approach}, {"heading", obs.heading}, {"lanes", lanes}};
}

namespace {

constexpr double kCanvas = 800.0;
constexpr double kCenter = kCanvas / 2.0;
constexpr double kBox = 48.0;        // half-width of the junction box, px
constexpr double kLaneWidth = 8.0;   // px
constexpr double kScale = 2.0;       // px per metre

double heading_angle(const std::string& heading, int index, int count) {
  static const std::map<std::string, double> angles = {{"S", 0.0},    {"SW", 45.0}, {"W", 90.0},  {"NW", 135.0},
                                                       {"N", 180.0}, {"NE", 225.0}, {"E", 270.0}, {"SE", 315.0}};
  auto it = angles.find(heading);
  if (it != angles.end()) return it->second;
  return 360.0 * index / std::max(1, count);
}

const char* color_name(LightColor c) {
  switch (c) {
    case LightColor::Green: return "#2e9e44";
    case LightColor::Yellow: return "#e8b61c";
    case LightColor::Red: break;
  }
  return "#c8202a";
}

std::string vehicle_glyph(const Vehicle& v, double x, double y, double scale) {
  const bool em = is_emergency(v.cls);
  return "<rect class=\"vehicle" + std::string(em ? " emergency" : "") + "\" data-id=\"" + std::to_string(v.id) +
         "\" x=\"" + fixed(x + 1, 1) + "\" y=\"" + fixed(y, 1) + "\" width=\"" + fixed(kLaneWidth - 3, 1) +
         "\" height=\"" + fixed(v.length * scale, 1) + "\" fill=\"" + (em ? "#ff2020" : "#dfe6ee") + "\"" +
         (em ? " stroke=\"#ffffff\" stroke-width=\"1.5\"" : "") + "/>\n";
}

}  // namespace

std::string render_snapshot(const WorldState& world, const SignalState& signal) {
  const auto& topo = *world.topology;
  const double max_len = [&] {
    double m = 0.0;
    for (const auto& a : topo.approaches) m = std::max({m, a.length_in, a.length_out});
    return m;
  }();
  const double scale = std::min(kScale, (kCenter - kBox - 16.0) / std::max(1.0, max_len));
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"800\" viewBox=\"0 0 800 800\">\n";
  s += "<rect width=\"800\" height=\"800\" fill=\"#f4f4f0\"/>\n";
  s += "<text x=\"12\" y=\"22\" font-family=\"monospace\" font-size=\"14\">" + topo.name + " t=" +
       fixed(world.clock, 1) + "s phase " + std::to_string(signal.current_phase) +
       (signal.in_yellow() ? " (yellow to " + std::to_string(*signal.pending_phase) + ")" : "") + "</text>\n";
  s += "<rect class=\"junction\" x=\"" + fixed(kCenter - kBox, 1) + "\" y=\"" + fixed(kCenter - kBox, 1) +
       "\" width=\"" + fixed(2 * kBox, 1) + "\" height=\"" + fixed(2 * kBox, 1) + "\" fill=\"#8a8a8a\"/>\n";
  const int count = static_cast<int>(topo.approaches.size());
  for (int ai = 0; ai < count; ++ai) {
    const auto& ap = topo.approaches[static_cast<size_t>(ai)];
    const double angle = heading_angle(ap.heading, ai, count);
    s += "<g class=\"approach\" data-heading=\"" + ap.heading + "\" transform=\"rotate(" + fixed(angle, 1) + " " +
         fixed(kCenter, 1) + " " + fixed(kCenter, 1) + ")\">\n";
    // Canonical frame: the approach extends downward from the junction box;
    // incoming lanes sit right of the centre line, outgoing lanes left of it.
    const double y0 = kCenter + kBox;
    const auto& out_ids = world.outgoing_lane_ids[static_cast<size_t>(ap.id - 1)];
    for (size_t i = 0; i < out_ids.size(); ++i) {
      const Lane& lane = world.lane(out_ids[i]);
      const double x = kCenter - static_cast<double>(i + 1) * kLaneWidth;
      s += "<rect class=\"lane-out\" x=\"" + fixed(x, 1) + "\" y=\"" + fixed(y0, 1) + "\" width=\"" +
           fixed(kLaneWidth - 1, 1) + "\" height=\"" + fixed(lane.length * scale, 1) + "\" fill=\"#5a5a5a\"/>\n";
      for (const auto& v : lane.vehicles) s += vehicle_glyph(v, x, y0 + std::max(0.0, v.position - v.length) * scale, scale);
    }
    const auto& ids = world.incoming_lane_ids[static_cast<size_t>(ap.id - 1)];
    for (size_t i = 0; i < ids.size(); ++i) {
      const Lane& lane = world.lane(ids[i]);
      const double x = kCenter + static_cast<double>(i) * kLaneWidth;
      s += "<rect class=\"lane-in\" x=\"" + fixed(x, 1) + "\" y=\"" + fixed(y0, 1) + "\" width=\"" +
           fixed(kLaneWidth - 1, 1) + "\" height=\"" + fixed(lane.length * scale, 1) + "\" fill=\"#4a4a4a\"/>\n";
      s += "<rect class=\"signal\" data-movement=\"" + std::to_string(lane.movement) + "\" x=\"" + fixed(x, 1) +
           "\" y=\"" + fixed(y0 - 3, 1) + "\" width=\"" + fixed(kLaneWidth - 1, 1) + "\" height=\"3.0\" fill=\"" +
           color_name(movement_color(signal, topo, lane.movement)) + "\"/>\n";
      for (const auto& v : lane.vehicles)
        s += vehicle_glyph(v, x, y0 + std::max(0.0, lane.length - v.position) * scale, scale);
    }
    s += "</g>\n";
  }
  s += "</svg>\n";
  return s;
}

void write_snapshot(const WorldState& world, const SignalState& signal, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write snapshot '" + path + "'");
  out << render_snapshot(world, signal);
  if (!out) fail(ErrorKind::Io, "failed writing snapshot '" + path + "'");
}

}  // namespace vlmlight
