#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "signal.hpp"
#include "topology.hpp"

namespace vlmlight {

enum class VehicleClass { Regular, Police, Ambulance, FireTruck };

std::string_view to_string(VehicleClass cls);
VehicleClass parse_vehicle_class(std::string_view text);
inline bool is_emergency(VehicleClass cls) { return cls != VehicleClass::Regular; }

struct DynamicsParams {
  double accel = 2.6;       // m/s^2
  double decel = 4.5;       // m/s^2
  double tau = 1.0;         // s, driver reaction / desired headway time
  double min_gap = 2.5;     // m, bumper to bumper
  double max_speed = 13.9;  // m/s
  double halt_speed = 0.1;  // below this a vehicle counts as waiting
  double regular_length = 5.0;
  double emergency_length = 7.0;
  double speed_mean = 10.0;
  double speed_variance = 3.0;
  double speed_min = 3.0;
};

using VehicleId = std::uint32_t;

struct Vehicle {
  VehicleId id = 0;
  VehicleClass cls = VehicleClass::Regular;
  double desired_speed = 10.0;
  double length = 5.0;
  double position = 0.0;  // front bumper, metres from the lane start
  double speed = 0.0;
  MovementId movement = 0;
  int lane = -1;      // current lane id
  int out_lane = -1;  // lane id it will take after the stop line
  double spawn_time = 0.0;  // demand instant
  double entry_time = 0.0;  // insertion onto the lane; equals spawn_time while in the backlog
  std::optional<double> exit_time;
  double accumulated_wait = 0.0;
  bool halted = false;
};

struct Lane {
  int id = 0;
  bool incoming = true;
  ApproachId approach = 0;
  int index = 0;  // lane index within the approach, 0 = leftmost
  double length = 0.0;
  MovementId movement = 0;       // incoming lanes only
  std::deque<Vehicle> vehicles;  // front (largest position) first
  std::deque<Vehicle> backlog;   // spawned, waiting for room at the lane entry (not yet in the network)
};

enum class EventKind { Spawn, Insert, Halt, Move, Cross, Exit };
std::string_view to_string(EventKind kind);
EventKind parse_event_kind(std::string_view text);

struct Event {
  double t = 0.0;
  EventKind kind = EventKind::Spawn;
  VehicleId vehicle = 0;
  int lane = -1;
  double speed = 0.0;
  VehicleClass cls = VehicleClass::Regular;
};

struct VehicleRecord {
  VehicleId id = 0;
  VehicleClass cls = VehicleClass::Regular;
  MovementId movement = 0;
  double spawn_time = 0.0;
  double entry_time = 0.0;
  std::optional<double> exit_time;
  double accumulated_wait = 0.0;
  bool completed = false;
};

struct ScheduledEmergency {
  double time = 0.0;
  ApproachId approach = 0;
  VehicleClass cls = VehicleClass::Ambulance;
};

/// Emergency arrival instants for one episode, sorted by time.
struct EmergencySchedule {
  std::vector<ScheduledEmergency> entries;
};

EmergencySchedule make_emergency_schedule(const DemandProfile& profile, std::uint64_t seed, double start = 0.0);

struct WorldOptions {
  DynamicsParams dynamics;
  bool log_events = false;
  /// Emergencies are scheduled in [emergency_start, horizon).
  double emergency_start = 0.0;
};

struct OccupancySample {
  double t = 0.0;
  double occupancy = 0.0;
};

/// Mutable simulation state of one episode. Single owner; the topology and
/// demand are shared read-only.
struct WorldState {
  std::shared_ptr<const Topology> topology;
  DemandProfile demand;
  WorldOptions options;
  double clock = 0.0;
  std::mt19937_64 rng;
  EmergencySchedule emergencies;

  std::vector<Lane> lanes;
  std::vector<std::vector<int>> incoming_lane_ids;  // [approach-1][index]
  std::vector<std::vector<int>> outgoing_lane_ids;  // [approach-1][index]
  std::vector<int> out_lane_cursor;                 // round robin per approach

  // Per movement (index m-1): stop-line crossings, spawn instants, and
  // occupancy sampled after every dynamics step.
  std::vector<std::vector<double>> crossings;
  std::vector<std::vector<double>> arrivals;
  std::vector<std::vector<OccupancySample>> occupancy;

  std::vector<VehicleRecord> finished;
  std::vector<Event> events;
  VehicleId next_id = 1;
  std::uint64_t spawned = 0;
  std::uint64_t exited = 0;

  const Lane& lane(int id) const { return lanes[static_cast<size_t>(id)]; }
  Lane& lane(int id) { return lanes[static_cast<size_t>(id)]; }
  std::uint64_t in_world() const;
};

WorldState make_world(std::shared_ptr<const Topology> topology, DemandProfile demand, std::uint64_t seed,
                      WorldOptions options = {});

/// New arrivals for [clock, clock + dt): Poisson counts per approach plus any
/// scheduled emergency vehicles. Returned vehicles have no id or lane yet.
std::vector<Vehicle> spawn_arrivals(const DemandProfile& profile, const Topology& topology,
                                    const EmergencySchedule& schedule, std::mt19937_64& rng, double dt, double clock,
                                    const DynamicsParams& params = {});

/// Assigns ids and lanes and queues the vehicles at their lane entries.
void admit_vehicles(WorldState& world, std::vector<Vehicle> vehicles);

/// Places a vehicle directly on a lane (scenario construction and tests).
/// Throws if the slot would break the lane ordering.
VehicleId place_vehicle(WorldState& world, int lane_id, double position, double speed, MovementId movement = 0,
                        VehicleClass cls = VehicleClass::Regular, double desired_speed = 10.0);

/// One dynamics step of length dt in (0, 1] under the given signal.
void step_dynamics(WorldState& world, const SignalState& signal, double dt);

/// spawn_arrivals + admit_vehicles + step_dynamics.
void advance(WorldState& world, const SignalState& signal, double dt);

/// Advances world and signal together for `duration` seconds in steps of dt.
void run_interval(WorldState& world, SignalState& signal, double duration, double dt);

struct MovementStats {
  double flow = 0.0;       // stop-line crossings per second
  double occ_max = 0.0;    // fraction of lane length covered by vehicles
  double occ_mean = 0.0;
};

MovementStats movement_stats(const WorldState& world, MovementId movement, double since);

/// Waiting (speed below the halt threshold) vehicles per movement, index m-1.
/// Vehicles held in a lane's entry backlog are stationary and count too.
std::vector<int> queue_lengths(const WorldState& world);

/// Finished records plus incomplete entries for everything still in-world.
std::vector<VehicleRecord> collect_records(const WorldState& world);

std::string format_event(const Event& e);
Event parse_event(std::string_view line);

}  // namespace vlmlight
