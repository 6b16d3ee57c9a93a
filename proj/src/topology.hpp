#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vlmlight {

inline constexpr int kMaxMovements = 12;

using MovementId = int;  // 1-based
using PhaseId = int;     // 1-based, contiguous
using ApproachId = int;  // 1-based

// Values match the I_s component of the RL movement feature.
enum class TurnKind : int { Straight = 0, Left = 1, Right = 2 };

std::string_view to_string(TurnKind kind);
TurnKind parse_turn_kind(std::string_view text);

struct Approach {
  ApproachId id = 0;
  std::string heading;  // compass label the traffic comes from: N, E, S, W, ...
  int lanes_in = 0;
  int lanes_out = 0;
  double length_in = 150.0;
  double length_out = 100.0;
};

struct Movement {
  MovementId id = 0;
  ApproachId from = 0;
  ApproachId to = 0;
  TurnKind turn = TurnKind::Straight;
  std::vector<int> lanes;  // incoming lane indices on `from`, 0 = leftmost
};

struct Phase {
  PhaseId id = 0;
  std::vector<MovementId> movements;
};

/// Intersection geometry plus the phase to movement mapping.
///
/// Instances are only produced by load_topology(), which validates the
/// structural invariants; after that the object is immutable and shared.
class Topology {
 public:
  std::string name;
  std::vector<Approach> approaches;
  std::vector<Movement> movements;  // sorted by id, ids are 1..M
  std::vector<Phase> phases;        // sorted by id, ids are 1..P
  std::set<std::pair<MovementId, MovementId>> conflicts;  // stored with first < second

  int movement_count() const { return static_cast<int>(movements.size()); }
  int phase_count() const { return static_cast<int>(phases.size()); }

  const Approach& approach(ApproachId id) const;
  const Movement& movement(MovementId id) const;
  const Phase& phase(PhaseId id) const;
  bool has_movement(MovementId id) const { return id >= 1 && id <= movement_count(); }
  bool phase_contains(PhaseId phase, MovementId movement) const;
  bool conflicting(MovementId a, MovementId b) const;

  /// Movement owning incoming lane `lane` of approach `approach`, or 0.
  MovementId movement_of_lane(ApproachId approach, int lane) const;

  /// Phase id -> movement ids (the predefined phase/lane mapping).
  std::map<PhaseId, std::vector<MovementId>> phase_movement_map() const;
};

/// Parses and validates a topology JSON document. Throws Error(Parse) for
/// malformed input and Error(Config) for structural violations.
Topology load_topology(std::string_view config_text);

struct ApproachDemand {
  ApproachId approach = 0;
  double rate_mean = 0.0;  // vehicles per second
  double rate_std = 0.0;
  double rate_min = 0.0;
  double rate_max = 0.0;
  int emergency_count = 0;
  std::map<MovementId, double> turning;  // sums to 1 over the approach's movements
};

struct DemandProfile {
  double horizon = 600.0;
  std::vector<ApproachDemand> approaches;

  const ApproachDemand* find(ApproachId id) const;
};

DemandProfile load_demand(std::string_view config_text, const Topology& topology);

struct Scenario {
  std::string name;
  Topology topology;
  DemandProfile demand;
};

/// Scenario document: {"topology": {...}, "demand": {...}}.
Scenario load_scenario(std::string_view config_text);
Scenario load_scenario_file(const std::string& path);

/// Built-in scenarios: "songdo", "yaumatei", "massy".
Scenario builtin_scenario(std::string_view name);
std::vector<std::string> builtin_scenario_names();
std::string builtin_scenario_text(std::string_view name);

/// Scenario by builtin name, or else by file path.
Scenario resolve_scenario(const std::string& name_or_path);

}  // namespace vlmlight
