#include "world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "error.hpp"
#include "numfmt.hpp"

namespace vlmlight {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::uint64_t kEmergencySalt = 0x9E3779B97F4A7C15ULL;

// Krauss safe speed behind a leader `gap` metres ahead (already net of the
// required minimum gap) travelling at `v_leader`.
double safe_speed(double gap, double v, double v_leader, const DynamicsParams& p) {
  if (gap == kInf) return kInf;
  const double v_bar = 0.5 * (v + v_leader);
  const double vs = v_leader + (gap - v_leader * p.tau) / (v_bar / p.decel + p.tau);
  return std::max(0.0, vs);
}

double target_speed(const Vehicle& v, double safe, double dt, const DynamicsParams& p) {
  double next = std::min({v.speed + p.accel * dt, v.desired_speed, p.max_speed, safe});
  return std::clamp(next, 0.0, p.max_speed);
}

void log_event(WorldState& w, double t, EventKind kind, const Vehicle& v) {
  if (w.options.log_events) w.events.push_back({t, kind, v.id, v.lane, v.speed, v.cls});
}

double footprint_on_lane(const Vehicle& v, double lane_length) {
  const double back = std::max(0.0, v.position - v.length);
  const double front = std::min(lane_length, v.position);
  return std::max(0.0, front - back);
}

// A front vehicle proceeds on green, and on yellow only when it can no
// longer stop comfortably before the line.
bool proceeds(LightColor color, const Vehicle& v, double lane_length, const DynamicsParams& p) {
  if (color == LightColor::Green) return true;
  if (color == LightColor::Red) return false;
  const double dist = lane_length - v.position;
  return dist < v.speed * v.speed / (2.0 * p.decel);
}

void account_wait(WorldState& w, Vehicle& v, double t, double dt) {
  if (v.speed < w.options.dynamics.halt_speed) {
    v.accumulated_wait += dt;
    if (!v.halted) {
      v.halted = true;
      log_event(w, t, EventKind::Halt, v);
    }
  } else if (v.halted) {
    v.halted = false;
    log_event(w, t, EventKind::Move, v);
  }
}

VehicleRecord to_record(const Vehicle& v) {
  VehicleRecord r;
  r.id = v.id;
  r.cls = v.cls;
  r.movement = v.movement;
  r.spawn_time = v.spawn_time;
  r.entry_time = v.entry_time;
  r.exit_time = v.exit_time;
  r.accumulated_wait = v.accumulated_wait;
  r.completed = v.exit_time.has_value();
  return r;
}

}  // namespace

std::string_view to_string(VehicleClass cls) {
  switch (cls) {
    case VehicleClass::Regular: return "regular";
    case VehicleClass::Police: return "police";
    case VehicleClass::Ambulance: return "ambulance";
    case VehicleClass::FireTruck: return "fire_truck";
  }
  return "regular";
}

VehicleClass parse_vehicle_class(std::string_view text) {
  if (text == "regular") return VehicleClass::Regular;
  if (text == "police") return VehicleClass::Police;
  if (text == "ambulance") return VehicleClass::Ambulance;
  if (text == "fire_truck") return VehicleClass::FireTruck;
  fail(ErrorKind::Parse, "unknown vehicle class '" + std::string(text) + "'");
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::Spawn: return "spawn";
    case EventKind::Insert: return "insert";
    case EventKind::Halt: return "halt";
    case EventKind::Move: return "move";
    case EventKind::Cross: return "cross";
    case EventKind::Exit: return "exit";
  }
  return "spawn";
}

EventKind parse_event_kind(std::string_view text) {
  for (auto k : {EventKind::Spawn, EventKind::Insert, EventKind::Halt, EventKind::Move, EventKind::Cross,
                 EventKind::Exit})
    if (to_string(k) == text) return k;
  fail(ErrorKind::Parse, "unknown event kind '" + std::string(text) + "'");
}

std::uint64_t WorldState::in_world() const {
  std::uint64_t n = 0;
  for (const auto& l : lanes) n += l.vehicles.size() + l.backlog.size();
  return n;
}

EmergencySchedule make_emergency_schedule(const DemandProfile& profile, std::uint64_t seed, double start) {
  std::mt19937_64 rng(seed ^ kEmergencySalt);
  const double lo = std::clamp(start, 0.0, profile.horizon);
  std::uniform_real_distribution<double> when(lo, profile.horizon);
  std::uniform_int_distribution<int> which(0, 2);
  static constexpr VehicleClass kClasses[] = {VehicleClass::Police, VehicleClass::Ambulance, VehicleClass::FireTruck};
  EmergencySchedule schedule;
  for (const auto& a : profile.approaches) {
    for (int k = 0; k < a.emergency_count; ++k) {
      ScheduledEmergency e;
      e.time = when(rng);
      e.approach = a.approach;
      e.cls = kClasses[which(rng)];
      schedule.entries.push_back(e);
    }
  }
  std::stable_sort(schedule.entries.begin(), schedule.entries.end(),
                   [](const auto& x, const auto& y) { return x.time < y.time; });
  return schedule;
}

WorldState make_world(std::shared_ptr<const Topology> topology, DemandProfile demand, std::uint64_t seed,
                      WorldOptions options) {
  if (!topology) fail(ErrorKind::InvalidArgument, "make_world: null topology");
  WorldState w;
  w.topology = topology;
  w.options = options;
  w.rng.seed(seed);
  w.emergencies = make_emergency_schedule(demand, seed, options.emergency_start);
  w.demand = std::move(demand);

  const auto& topo = *topology;
  w.incoming_lane_ids.resize(topo.approaches.size());
  w.outgoing_lane_ids.resize(topo.approaches.size());
  w.out_lane_cursor.assign(topo.approaches.size(), 0);
  for (const auto& a : topo.approaches) {
    for (int i = 0; i < a.lanes_in; ++i) {
      Lane l;
      l.id = static_cast<int>(w.lanes.size());
      l.incoming = true;
      l.approach = a.id;
      l.index = i;
      l.length = a.length_in;
      l.movement = topo.movement_of_lane(a.id, i);
      w.incoming_lane_ids[static_cast<size_t>(a.id - 1)].push_back(l.id);
      w.lanes.push_back(std::move(l));
    }
  }
  for (const auto& a : topo.approaches) {
    for (int i = 0; i < a.lanes_out; ++i) {
      Lane l;
      l.id = static_cast<int>(w.lanes.size());
      l.incoming = false;
      l.approach = a.id;
      l.index = i;
      l.length = a.length_out;
      w.outgoing_lane_ids[static_cast<size_t>(a.id - 1)].push_back(l.id);
      w.lanes.push_back(std::move(l));
    }
  }
  const auto m = static_cast<size_t>(topo.movement_count());
  w.crossings.resize(m);
  w.arrivals.resize(m);
  w.occupancy.resize(m);
  return w;
}

std::vector<Vehicle> spawn_arrivals(const DemandProfile& profile, const Topology& topology,
                                    const EmergencySchedule& schedule, std::mt19937_64& rng, double dt, double clock,
                                    const DynamicsParams& params) {
  if (!(dt > 0.0)) fail(ErrorKind::InvalidArgument, "spawn_arrivals: dt must be positive");
  std::vector<Vehicle> out;
  std::normal_distribution<double> speed_dist(params.speed_mean, std::sqrt(params.speed_variance));

  auto pick_movement = [&](const ApproachDemand& a) {
    std::vector<MovementId> ids;
    std::vector<double> weights;
    for (const auto& [mid, w] : a.turning) {
      ids.push_back(mid);
      weights.push_back(w);
    }
    std::discrete_distribution<size_t> d(weights.begin(), weights.end());
    return ids[d(rng)];
  };
  auto make = [&](const ApproachDemand& a, VehicleClass cls) {
    Vehicle v;
    v.cls = cls;
    v.movement = pick_movement(a);
    double s = 0.0;
    do {
      s = speed_dist(rng);
    } while (s < params.speed_min || s > params.max_speed);
    v.desired_speed = s;
    v.length = is_emergency(cls) ? params.emergency_length : params.regular_length;
    v.spawn_time = clock;
    v.entry_time = clock;
    return v;
  };

  for (const auto& a : profile.approaches) {
    if (a.rate_mean <= 0.0 || a.turning.empty()) continue;
    std::poisson_distribution<int> count(a.rate_mean * dt);
    const int n = count(rng);
    for (int k = 0; k < n; ++k) out.push_back(make(a, VehicleClass::Regular));
  }
  auto it = std::lower_bound(schedule.entries.begin(), schedule.entries.end(), clock,
                             [](const ScheduledEmergency& e, double t) { return e.time < t; });
  for (; it != schedule.entries.end() && it->time < clock + dt; ++it) {
    const ApproachDemand* a = profile.find(it->approach);
    if (!a || a->turning.empty()) continue;
    out.push_back(make(*a, it->cls));
  }
  (void)topology;
  return out;
}

void admit_vehicles(WorldState& w, std::vector<Vehicle> vehicles) {
  const auto& topo = *w.topology;
  for (auto& v : vehicles) {
    const auto& mv = topo.movement(v.movement);
    const auto& in_ids = w.incoming_lane_ids[static_cast<size_t>(mv.from - 1)];
    int best = -1;
    size_t best_load = 0;
    for (int idx : mv.lanes) {
      const Lane& l = w.lane(in_ids[static_cast<size_t>(idx)]);
      const size_t load = l.vehicles.size() + l.backlog.size();
      if (best < 0 || load < best_load) {
        best = l.id;
        best_load = load;
      }
    }
    auto& cursor = w.out_lane_cursor[static_cast<size_t>(mv.to - 1)];
    const auto& out_ids = w.outgoing_lane_ids[static_cast<size_t>(mv.to - 1)];
    v.out_lane = out_ids[static_cast<size_t>(cursor) % out_ids.size()];
    ++cursor;
    v.id = w.next_id++;
    v.lane = best;
    v.speed = 0.0;
    v.position = 0.0;
    ++w.spawned;
    w.arrivals[static_cast<size_t>(v.movement - 1)].push_back(v.spawn_time);
    log_event(w, v.spawn_time, EventKind::Spawn, v);
    w.lane(best).backlog.push_back(std::move(v));
  }
}

VehicleId place_vehicle(WorldState& w, int lane_id, double position, double speed, MovementId movement,
                        VehicleClass cls, double desired_speed) {
  if (lane_id < 0 || lane_id >= static_cast<int>(w.lanes.size()))
    fail(ErrorKind::InvalidArgument, "place_vehicle: unknown lane");
  Lane& l = w.lane(lane_id);
  Vehicle v;
  v.id = w.next_id++;
  v.cls = cls;
  v.length = is_emergency(cls) ? w.options.dynamics.emergency_length : w.options.dynamics.regular_length;
  v.position = position;
  v.speed = speed;
  v.desired_speed = desired_speed;
  v.lane = lane_id;
  v.spawn_time = w.clock;
  v.entry_time = w.clock;
  v.movement = l.incoming ? l.movement : movement;
  if (v.movement == 0) fail(ErrorKind::InvalidArgument, "place_vehicle: outgoing lanes need an explicit movement");
  const auto& mv = w.topology->movement(v.movement);
  const auto& out_ids = w.outgoing_lane_ids[static_cast<size_t>(mv.to - 1)];
  v.out_lane = l.incoming ? out_ids.front() : lane_id;
  if (!l.vehicles.empty() && l.vehicles.back().position < position)
    fail(ErrorKind::InvalidArgument, "place_vehicle: vehicles must be placed front to back");
  ++w.spawned;
  log_event(w, w.clock, EventKind::Spawn, v);
  log_event(w, w.clock, EventKind::Insert, v);
  l.vehicles.push_back(std::move(v));
  return l.vehicles.back().id;
}

void step_dynamics(WorldState& w, const SignalState& signal, double dt) {
  if (!(dt > 0.0 && dt <= 1.0)) fail(ErrorKind::InvalidArgument, "step_dynamics: dt must lie in (0, 1]");
  const auto& p = w.options.dynamics;
  const auto& topo = *w.topology;
  const double t1 = w.clock + dt;

  std::vector<LightColor> colors(static_cast<size_t>(topo.movement_count()));
  for (const auto& m : topo.movements) colors[static_cast<size_t>(m.id - 1)] = movement_color(signal, topo, m.id);
  auto color_of = [&](const Lane& l) { return colors[static_cast<size_t>(l.movement - 1)]; };

  // Insertion at the lane entries, front of the backlog first.
  for (auto& l : w.lanes) {
    if (!l.incoming) continue;
    while (!l.backlog.empty()) {
      Vehicle& v = l.backlog.front();
      const double x = std::min(v.length, l.length);
      double safe = kInf;
      if (!l.vehicles.empty()) {
        const Vehicle& last = l.vehicles.back();
        const double gap = last.position - last.length - x;
        if (gap < p.min_gap) break;
        safe = safe_speed(gap - p.min_gap, v.desired_speed, last.speed, p);
      } else if (color_of(l) != LightColor::Green) {
        safe = safe_speed(l.length - x, v.desired_speed, 0.0, p);
      }
      v.position = x;
      v.speed = std::min({v.desired_speed, p.max_speed, safe});
      v.entry_time = w.clock;
      l.vehicles.push_back(std::move(v));
      l.backlog.pop_front();
      log_event(w, w.clock, EventKind::Insert, l.vehicles.back());
    }
  }

  // Speeds from the state at the start of the step.
  std::vector<std::vector<double>> next_speed(w.lanes.size());
  std::vector<bool> front_goes(w.lanes.size(), false);
  for (auto& l : w.lanes) {
    auto& ns = next_speed[static_cast<size_t>(l.id)];
    ns.resize(l.vehicles.size());
    for (size_t i = 0; i < l.vehicles.size(); ++i) {
      const Vehicle& v = l.vehicles[i];
      double safe = kInf;
      if (i > 0) {
        const Vehicle& lead = l.vehicles[i - 1];
        safe = safe_speed(lead.position - lead.length - v.position - p.min_gap, v.speed, lead.speed, p);
      } else if (l.incoming) {
        const bool goes = proceeds(color_of(l), v, l.length, p);
        front_goes[static_cast<size_t>(l.id)] = goes;
        if (goes) {
          const Lane& out = w.lane(v.out_lane);
          if (!out.vehicles.empty()) {
            const Vehicle& last = out.vehicles.back();
            safe = safe_speed(l.length + last.position - last.length - v.position - p.min_gap, v.speed, last.speed,
                              p);
          }
        } else {
          safe = safe_speed(l.length - v.position, v.speed, 0.0, p);
        }
      }
      ns[i] = target_speed(v, safe, dt, p);
    }
  }

  auto move_to = [&](Vehicle& v, double limit, double speed) {
    double x = v.position + speed * dt;
    x = std::min(x, limit);
    x = std::max(x, v.position);
    v.speed = (x - v.position) / dt;
    v.position = x;
  };

  // Outgoing lanes first: they are the leaders of vehicles at the stop lines.
  std::vector<Vehicle> exited;
  for (auto& l : w.lanes) {
    if (l.incoming) continue;
    const auto& ns = next_speed[static_cast<size_t>(l.id)];
    for (size_t i = 0; i < l.vehicles.size(); ++i) {
      double limit = kInf;
      if (i > 0) limit = l.vehicles[i - 1].position - l.vehicles[i - 1].length - p.min_gap;
      move_to(l.vehicles[i], limit, ns[i]);
    }
    while (!l.vehicles.empty() && l.vehicles.front().position >= l.length) {
      exited.push_back(std::move(l.vehicles.front()));
      l.vehicles.pop_front();
    }
  }

  for (auto& l : w.lanes) {
    if (!l.incoming) continue;
    const auto& ns = next_speed[static_cast<size_t>(l.id)];
    std::deque<Vehicle> staying;
    bool leader_in_lane = false;  // a vehicle ahead that stays on this lane
    double leader_back = 0.0;
    for (size_t i = 0; i < l.vehicles.size(); ++i) {
      Vehicle& v = l.vehicles[i];
      double limit = kInf;
      bool goes = false;
      if (leader_in_lane) {
        limit = leader_back - p.min_gap;
      } else {
        goes = (i == 0) ? front_goes[static_cast<size_t>(l.id)] : proceeds(color_of(l), v, l.length, p);
        if (!goes) {
          limit = l.length;
        } else {
          const Lane& out = w.lane(v.out_lane);
          if (!out.vehicles.empty()) {
            const Vehicle& last = out.vehicles.back();
            limit = l.length + last.position - last.length - p.min_gap;
          }
        }
      }
      move_to(v, limit, ns[i]);
      if (!leader_in_lane && goes && v.position > l.length) {
        Lane& out = w.lane(v.out_lane);
        v.position -= l.length;
        v.lane = out.id;
        w.crossings[static_cast<size_t>(v.movement - 1)].push_back(t1);
        log_event(w, t1, EventKind::Cross, v);
        out.vehicles.push_back(std::move(v));
        continue;
      }
      leader_in_lane = true;
      leader_back = v.position - v.length;
      staying.push_back(std::move(v));
    }
    l.vehicles = std::move(staying);
  }

  for (auto& l : w.lanes) {
    for (auto& v : l.vehicles) account_wait(w, v, t1, dt);
  }
  for (auto& v : exited) {
    account_wait(w, v, t1, dt);
    v.exit_time = t1;
    log_event(w, t1, EventKind::Exit, v);
    w.finished.push_back(to_record(v));
    ++w.exited;
  }

  for (const auto& m : topo.movements) {
    const auto& in_ids = w.incoming_lane_ids[static_cast<size_t>(m.from - 1)];
    double covered = 0.0;
    double capacity = 0.0;
    for (int idx : m.lanes) {
      const Lane& l = w.lane(in_ids[static_cast<size_t>(idx)]);
      capacity += l.length;
      for (const auto& v : l.vehicles) covered += footprint_on_lane(v, l.length);
    }
    w.occupancy[static_cast<size_t>(m.id - 1)].push_back({t1, capacity > 0.0 ? covered / capacity : 0.0});
  }
  w.clock = t1;
}

void advance(WorldState& w, const SignalState& signal, double dt) {
  admit_vehicles(w, spawn_arrivals(w.demand, *w.topology, w.emergencies, w.rng, dt, w.clock, w.options.dynamics));
  step_dynamics(w, signal, dt);
}

void run_interval(WorldState& w, SignalState& signal, double duration, double dt) {
  const auto steps = static_cast<long>(std::llround(duration / dt));
  if (steps < 1 || std::abs(static_cast<double>(steps) * dt - duration) > 1e-9)
    fail(ErrorKind::InvalidArgument, "run_interval: duration must be a positive multiple of dt");
  for (long k = 0; k < steps; ++k) {
    advance(w, signal, dt);
    signal = tick_signal(signal, dt);
  }
}

MovementStats movement_stats(const WorldState& w, MovementId movement, double since) {
  if (!w.topology->has_movement(movement))
    fail(ErrorKind::InvalidArgument, "movement_stats: unknown movement " + std::to_string(movement));
  MovementStats s;
  const double window = w.clock - since;
  if (!(window > 0.0)) return s;
  const auto& cross = w.crossings[static_cast<size_t>(movement - 1)];
  const auto first = std::upper_bound(cross.begin(), cross.end(), since);
  s.flow = static_cast<double>(std::distance(first, cross.end())) / window;
  const auto& occ = w.occupancy[static_cast<size_t>(movement - 1)];
  auto it = std::upper_bound(occ.begin(), occ.end(), since,
                             [](double t, const OccupancySample& o) { return t < o.t; });
  double sum = 0.0;
  size_t n = 0;
  for (; it != occ.end(); ++it, ++n) {
    s.occ_max = std::max(s.occ_max, it->occupancy);
    sum += it->occupancy;
  }
  s.occ_mean = n > 0 ? sum / static_cast<double>(n) : 0.0;
  return s;
}

std::vector<int> queue_lengths(const WorldState& w) {
  std::vector<int> q(static_cast<size_t>(w.topology->movement_count()), 0);
  for (const auto& l : w.lanes) {
    if (!l.incoming) continue;
    for (const auto& v : l.vehicles)
      if (v.speed < w.options.dynamics.halt_speed) ++q[static_cast<size_t>(l.movement - 1)];
    q[static_cast<size_t>(l.movement - 1)] += static_cast<int>(l.backlog.size());
  }
  return q;
}

std::vector<VehicleRecord> collect_records(const WorldState& w) {
  std::vector<VehicleRecord> out = w.finished;
  for (const auto& l : w.lanes) {
    for (const auto& v : l.vehicles) out.push_back(to_record(v));
    for (const auto& v : l.backlog) out.push_back(to_record(v));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

std::string format_event(const Event& e) {
  std::string s = "{\"t\":" + format_double(e.t) + ",\"kind\":\"" + std::string(to_string(e.kind)) +
                  "\",\"vehicle\":" + std::to_string(e.vehicle) + ",\"lane\":" + std::to_string(e.lane) +
                  ",\"speed\":" + format_double(e.speed) + ",\"class\":\"" + std::string(to_string(e.cls)) + "\"}";
  return s;
}

Event parse_event(std::string_view line) {
  auto doc = nlohmann::json::parse(line.begin(), line.end(), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) fail(ErrorKind::Parse, "event log: malformed record");
  try {
    Event e;
    e.t = doc.at("t").get<double>();
    e.kind = parse_event_kind(doc.at("kind").get<std::string>());
    e.vehicle = doc.at("vehicle").get<VehicleId>();
    e.lane = doc.at("lane").get<int>();
    e.speed = doc.at("speed").get<double>();
    if (doc.contains("class")) e.cls = parse_vehicle_class(doc.at("class").get<std::string>());
    return e;
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::Parse, "event log: record is missing fields");
  }
}

}  // namespace vlmlight
