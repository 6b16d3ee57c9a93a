#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "signal.hpp"
#include "world.hpp"

namespace vlmlight {

enum class Congestion { Low, Medium, High };
std::string_view to_string(Congestion level);

inline constexpr double kCongestionMedium = 0.3;  // occupancy at or above -> medium
inline constexpr double kCongestionHigh = 0.6;    // occupancy at or above -> high
Congestion congestion_level(double occupancy);

struct EmergencySighting {
  VehicleId vehicle = 0;
  VehicleClass cls = VehicleClass::Ambulance;
  double distance = 0.0;  // front bumper to stop line, metres
  double speed = 0.0;
  double waited = 0.0;    // accumulated wait so far, seconds
};

struct LaneObservation {
  int lane = 0;  // index within the approach, 0 = leftmost
  MovementId movement = 0;
  TurnKind turn = TurnKind::Straight;
  int vehicles = 0;
  int queued = 0;
  double occupancy = 0.0;
  Congestion congestion = Congestion::Low;
  std::vector<EmergencySighting> emergencies;
};

/// Ground-truth view of one incoming approach over its full length.
struct SceneObservation {
  ApproachId approach = 0;
  std::string heading;
  std::vector<LaneObservation> lanes;

  bool has_emergency() const;
  int high_congestion_lanes() const;
};

struct SceneDescription {
  ApproachId approach = 0;
  std::string heading;
  std::string text;
  SceneObservation facts;
};

struct PhaseDescription {
  PhaseId phase = 0;
  std::string text;
  std::vector<MovementId> movements;
  bool emergency = false;
  std::vector<LaneObservation> lanes;  // facts of every member lane, by approach then lane
  std::vector<ApproachId> lane_approach;  // approach of each entry in `lanes`
};

SceneObservation observe_approach(const WorldState& world, ApproachId approach);
std::vector<SceneObservation> observe_all(const WorldState& world);

/// Deterministic template text covering lane semantics, congestion and any
/// emergency or special vehicles.
SceneDescription describe_scene(const SceneObservation& obs, const Topology& topology);

/// Regroups direction-level facts by the phase to movement mapping. Throws
/// Error(InvalidArgument) when an approach description is missing.
std::vector<PhaseDescription> aggregate_phases(const std::vector<SceneDescription>& descriptions,
                                               const Topology& topology);

nlohmann::json lane_to_json(const LaneObservation& lane);
nlohmann::json observation_to_json(const SceneObservation& obs);

/// Top-down SVG schematic: lanes, signal heads, vehicles (emergencies
/// highlighted). Byte-identical for identical inputs.
std::string render_snapshot(const WorldState& world, const SignalState& signal);
void write_snapshot(const WorldState& world, const SignalState& signal, const std::string& path);

}  // namespace vlmlight
