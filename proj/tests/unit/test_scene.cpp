#include <doctest.h>

#include "error.hpp"
#include "scene.hpp"

using namespace vlmlight;

namespace {
WorldState massy_world() {
  auto s = builtin_scenario("massy");
  return make_world(std::make_shared<const Topology>(s.topology), s.demand, 1);
}
}  // namespace

TEST_CASE("congestion thresholds") {
  CHECK(congestion_level(0.29) == Congestion::Low);
  CHECK(congestion_level(0.3) == Congestion::Medium);
  CHECK(congestion_level(0.6) == Congestion::High);
}

TEST_CASE("scene description reports lanes and emergency vehicles") {
  auto w = massy_world();
  const int lane = w.incoming_lane_ids[0][0];
  place_vehicle(w, lane, 100.0, 0.0, 1, VehicleClass::Ambulance);
  const auto obs = observe_approach(w, 1);
  REQUIRE(obs.lanes.size() == 3);
  CHECK(obs.lanes[0].vehicles == 1);
  CHECK(obs.lanes[0].queued == 1);
  REQUIRE(obs.lanes[0].emergencies.size() == 1);
  CHECK(obs.lanes[0].emergencies[0].distance == doctest::Approx(50.0));
  const auto d = describe_scene(obs, *w.topology);
  CHECK(d.text.rfind("Approach W (3 incoming lanes): 1 vehicle, 1 queued.", 0) == 0);
  CHECK(d.text.find("Lane 3 (right-turn, movement 6 toward S): empty") != std::string::npos);
  CHECK(d.text.find("ambulance in lane 1, 50.0 m from the stop line at 0.0 m/s.") != std::string::npos);
  const auto calm = describe_scene(observe_approach(w, 2), *w.topology);
  CHECK(calm.text.find("No emergency or special vehicles.") != std::string::npos);
}

TEST_CASE("phase aggregation follows the phase to movement map") {
  auto w = massy_world();
  place_vehicle(w, w.incoming_lane_ids[2][2], 140.0, 0.0, 5, VehicleClass::FireTruck);
  std::vector<SceneDescription> ds;
  for (const auto& o : observe_all(w)) ds.push_back(describe_scene(o, *w.topology));
  const auto phases = aggregate_phases(ds, *w.topology);
  REQUIRE(phases.size() == 3);
  // movement 5 (S right) belongs to phases 2 and 3.
  CHECK_FALSE(phases[0].emergency);
  CHECK(phases[1].emergency);
  CHECK(phases[2].emergency);
  CHECK(phases[2].movements == std::vector<MovementId>{4, 5});
  ds.pop_back();
  CHECK_THROWS_AS(aggregate_phases(ds, *w.topology), Error);
}

TEST_CASE("observation JSON round trips through the scripted schema") {
  auto w = massy_world();
  place_vehicle(w, w.incoming_lane_ids[1][1], 60.0, 3.0, 2, VehicleClass::Police);
  const auto obs = observe_approach(w, 2);
  const auto j = observation_to_json(obs);
  CHECK(j.at("lanes").size() == 2);
  CHECK(j["lanes"][1]["emergencies"][0]["class"] == "police");
}

TEST_CASE("snapshots are deterministic SVG and highlight emergencies") {
  auto w = massy_world();
  place_vehicle(w, w.incoming_lane_ids[0][0], 100.0, 0.0, 1, VehicleClass::Ambulance);
  place_vehicle(w, w.incoming_lane_ids[0][1], 90.0, 2.0, 1);
  const auto sig = initial_signal();
  const auto a = render_snapshot(w, sig);
  CHECK(a == render_snapshot(w, sig));
  CHECK(a.rfind("<svg", 0) == 0);
  CHECK(a.find("class=\"vehicle emergency\"") != std::string::npos);
  CHECK(a.find("class=\"vehicle\"") != std::string::npos);
  CHECK_THROWS_AS(write_snapshot(w, sig, "/nonexistent-dir/x.svg"), Error);
}
