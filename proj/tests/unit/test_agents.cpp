#include <doctest.h>

#include <algorithm>

#include "agents/backend.hpp"
#include "error.hpp"

using namespace vlmlight;

namespace {

LaneObservation lane(int idx, MovementId m, int queued, double occ = 0.1) {
  LaneObservation l;
  l.lane = idx;
  l.movement = m;
  l.vehicles = queued;
  l.queued = queued;
  l.occupancy = occ;
  l.congestion = congestion_level(occ);
  return l;
}

EmergencySighting sighting(VehicleId id, double distance, double waited) {
  return {id, VehicleClass::Ambulance, distance, 0.0, waited};
}

std::string error_of(std::string_view text) {
  try {
    extract_json(text);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("extract_json finds the first object with an integer action") {
  CHECK(extract_json("Sure. {\"action\": 3, \"rationale\": \"x\"} done").action == 3);
  CHECK(extract_json("{\"note\": \"{not it}\"} then {\"action\": 2}").action == 2);
  CHECK(extract_json("{\"rationale\": \"brace } inside\", \"action\": 4}").action == 4);
  CHECK(error_of("no json here") == "no object found");
  CHECK(error_of("{\"phase\": 2}") == "missing action");
  CHECK(error_of("{\"action\": \"2\"}") == "action must be an integer");
  CHECK(error_of("{\"action\": 2.5}") == "action must be an integer");
  CHECK(error_of("{\"action\": 1") == "no object found");
}

TEST_CASE("templates ship for every role and fill strictly") {
  for (auto role : {AgentRole::Scene, AgentRole::ModeSelector, AgentRole::Phase, AgentRole::Plan, AgentRole::Check}) {
    const auto t = load_template(role);
    CHECK_FALSE(t.text.empty());
    CHECK_FALSE(t.placeholders().empty());
  }
  const auto plan = load_template(AgentRole::Plan);
  auto names = plan.placeholders();
  std::sort(names.begin(), names.end());
  CHECK(names == std::vector<std::string>{"current_phase", "objectives", "phases"});
  CHECK_THROWS_WITH_AS(fill_template(plan, {{"phases", "x"}}), doctest::Contains("current_phase"), Error);
  const auto filled = fill_template(plan, {{"phases", "P"}, {"current_phase", "2"}, {"objectives", "O"}});
  CHECK(filled.find("{{") == std::string::npos);
  CHECK_THROWS_AS(load_template(AgentRole::Plan, "/nonexistent-dir"), Error);
}

TEST_CASE("critical condition: emergency or two high-congestion lanes") {
  SceneObservation calm;
  calm.approach = 1;
  calm.lanes = {lane(0, 1, 3, 0.7), lane(1, 1, 2, 0.2)};
  CHECK_FALSE(critical_condition({calm}));
  auto jammed = calm;
  jammed.lanes[1].occupancy = 0.65;
  jammed.lanes[1].congestion = congestion_level(0.65);
  CHECK(critical_condition({jammed}));
  auto urgent = calm;
  urgent.lanes[1].emergencies.push_back(sighting(9, 40, 0));
  CHECK(critical_condition({urgent}));
}

TEST_CASE("plan rule: nearest emergency, then longest wait, then lowest phase") {
  PhaseDescription p1, p2, p3;
  p1.phase = 1;
  p2.phase = 2;
  p3.phase = 3;
  p1.lanes = {lane(0, 1, 9)};
  p2.lanes = {lane(0, 2, 1)};
  p3.lanes = {lane(0, 3, 2)};
  CHECK(plan_rule({p1, p2, p3}).phase == 1);  // longest queue
  p3.lanes[0].emergencies = {sighting(5, 30, 2)};
  p2.lanes[0].emergencies = {sighting(6, 60, 9)};
  CHECK(plan_rule({p1, p2, p3}).phase == 3);  // nearest
  p2.lanes[0].emergencies = {sighting(6, 30, 9)};
  CHECK(plan_rule({p1, p2, p3}).phase == 2);  // tie on distance, longer wait
  p3.lanes[0].emergencies = {sighting(5, 30, 9)};
  CHECK(plan_rule({p1, p2, p3}).phase == 2);  // full tie, lowest id
  CHECK_THROWS_AS(plan_rule({}), Error);
}

TEST_CASE("check rule keeps feasible proposals and repairs the rest") {
  CHECK(check_rule(3, {1, 2, 3}, 1) == 3);
  CHECK(check_rule(4, {1, 2, 3}, 2) == 2);
  CHECK(check_rule(std::nullopt, {2, 3}, 1) == 2);
  CHECK_THROWS_AS(check_rule(1, {}, 1), Error);
}

TEST_CASE("scripted backend renders the rules and rejects foreign inputs") {
  auto topo = std::make_shared<const Topology>(builtin_scenario("massy").topology);
  ScriptedBackend b(topo);
  AgentRequest check{AgentRole::Check, "", {{"proposal", 3}, {"feasible", {1}}, {"current", 1}}};
  CHECK(extract_json(b.complete(check)).action == 1);
  AgentRequest bad{AgentRole::Plan, "", {{"unexpected", 1}}};
  CHECK_THROWS_AS(b.complete(bad), Error);
}

TEST_CASE("invalid backend deliberates and never yields an action") {
  InvalidBackend b;
  CHECK(b.complete({AgentRole::ModeSelector, "p", {}}) == "DELIBERATIVE");
  CHECK_THROWS_AS(extract_json(b.complete({AgentRole::Plan, "p", {}})), Error);
  CHECK_THROWS_AS(extract_json(b.complete({AgentRole::Check, "p", {}})), Error);
}

TEST_CASE("backend config validation") {
  BackendConfig c;
  c.kind = "http";
  CHECK_THROWS_AS(c.validate(), Error);
  c.endpoint = "http://127.0.0.1:1";
  CHECK_THROWS_AS(c.validate(), Error);
  c.model = "m";
  CHECK_NOTHROW(c.validate());
  c.kind = "carrier-pigeon";
  CHECK_THROWS_AS(c.validate(), Error);
}
