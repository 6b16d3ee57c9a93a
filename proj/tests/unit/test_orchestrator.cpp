#include <doctest.h>

#include "error.hpp"
#include "orchestrator.hpp"
#include "rl/rl_controller.hpp"

using namespace vlmlight;

namespace {

// Replays canned replies per role and records every request.
class CannedBackend final : public Backend {
 public:
  std::map<AgentRole, std::vector<std::string>> replies;
  std::vector<AgentRequest> seen;
  std::string name() const override { return "canned"; }
  std::string complete(const AgentRequest& r) override {
    seen.push_back(r);
    auto& q = replies[r.role];
    if (q.empty()) fail(ErrorKind::Backend, "no canned reply");
    auto s = q.front();
    if (q.size() > 1) q.erase(q.begin());
    return s;
  }
};

}  // namespace

TEST_CASE("verification accepts a feasible plan proposal without calling Check") {
  CannedBackend b;
  OrchestratorOptions o;
  const auto v = verify_action(2, "", {1, 2}, 1, "", b, o);
  CHECK(v.accepted == 2);
  CHECK(v.attempts.size() == 1);
  CHECK(b.seen.empty());
}

TEST_CASE("verification asks Check for alternatives and stops on success") {
  CannedBackend b;
  b.replies[AgentRole::Check] = {"{\"action\": 4}", "{\"action\": 1}"};
  OrchestratorOptions o;
  const auto v = verify_action(3, "", {1}, 1, "", b, o);
  REQUIRE(v.attempts.size() == 3);
  CHECK_FALSE(v.attempts[0].feasible);
  CHECK(v.attempts[1].proposed == 4);
  CHECK(v.attempts[2].feasible);
  CHECK(v.accepted == 1);
  CHECK(v.accepted_json == "{\"action\":1}");
  CHECK(b.seen.size() == 2);
}

TEST_CASE("verification exhausts exactly n_check attempts") {
  for (int n : {1, 3, 5}) {
    CannedBackend b;
    b.replies[AgentRole::Check] = {"not json"};
    OrchestratorOptions o;
    o.n_check = n;
    const auto v = verify_action(std::nullopt, "plan failed", {2, 3}, 2, "", b, o);
    CHECK_FALSE(v.accepted);
    CHECK(v.attempts.size() == static_cast<size_t>(n));
    CHECK(v.attempts[0].reason == "plan failed");
  }
  OrchestratorOptions bad;
  bad.n_check = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("mode selector failures route to RL with a note") {
  SceneDescription d;
  d.text = "x";
  CannedBackend b;
  std::string note;
  CHECK(select_mode({d}, b, {}, &note) == ControlMode::RL);
  CHECK(note.find("mode_selector") != std::string::npos);
  b.replies[AgentRole::ModeSelector] = {"I pick DELIBERATIVE."};
  CHECK(select_mode({d}, b, {}, &note) == ControlMode::Deliberative);
}

TEST_CASE("invalid backend: three attempts per tick and the RL action executes") {
  auto scenario = builtin_scenario("massy");
  auto net = std::make_shared<const PolicyNet>(NetConfig{64, 4, 128, 3}, 21);
  ControllerSpec spec;
  spec.kind = "vlmlight";
  spec.policy = net;
  spec.backend.kind = "invalid";
  EpisodeOptions eo;
  eo.t_max = 200;
  const auto ep = run_episode(scenario, spec, 4, eo);
  REQUIRE(ep.traces.size() == 40);
  for (const auto& t : ep.traces) {
    CHECK(t.mode == ControlMode::Deliberative);
    CHECK(t.attempts.size() == 3);
    CHECK(t.fallback);
    CHECK(t.final_action == t.routine_action);
  }
  spec.kind = "rl";
  const auto rl = run_episode(scenario, spec, 4, eo);
  for (size_t i = 0; i < rl.traces.size(); ++i) CHECK(rl.traces[i].final_action == ep.traces[i].final_action);
}

TEST_CASE("traces round trip through NDJSON") {
  DecisionTrace t;
  t.t = 35;
  t.controller = "vlmlight";
  t.mode = ControlMode::Deliberative;
  t.feasible = {1, 3};
  t.scenes = {"a", "b"};
  t.llm_action = 3;
  t.attempts = {{1, 3, true, "ok"}, {2, std::nullopt, false, "none"}};
  t.routine_action = 1;
  t.final_action = 3;
  t.accepted = "{\"action\":3}";
  t.notes = {"n"};
  const auto text = format_traces({t, t});
  const auto back = parse_traces(text);
  REQUIRE(back.size() == 2);
  CHECK(format_traces(back) == text);
  CHECK_THROWS_AS(parse_traces("{oops\n"), Error);
}

TEST_CASE("signal history checker flags short greens, wrong yellows and infeasible actions") {
  std::vector<GreenInterval> h = {{1, 0.0, 10.0}, {2, 13.0, 20.0}, {3, 24.0, std::nullopt}};
  DecisionTrace t;
  t.feasible = {1};
  t.final_action = 2;
  const auto v = check_signal_history(h, {t});
  CHECK(v.size() == 3);
  std::vector<GreenInterval> ok = {{1, 0.0, 10.0}, {2, 13.0, 30.0}, {1, 33.0, std::nullopt}};
  CHECK(check_signal_history(ok, {}).empty());
}

TEST_CASE("episode option validation") {
  EpisodeOptions o;
  o.delta_t = 0.7;
  CHECK_THROWS_AS(o.validate(), Error);
  o = {};
  o.t_max = 602;
  CHECK_THROWS_AS(o.validate(), Error);
  o = {};
  o.warmup = 600;
  CHECK_THROWS_AS(o.validate(), Error);
  ControllerSpec rl;
  rl.kind = "rl";
  CHECK_THROWS_AS(run_episode(builtin_scenario("massy"), rl, 1), Error);
  rl.kind = "nope";
  CHECK_THROWS_AS(run_episode(builtin_scenario("massy"), rl, 1), Error);
}
