#include <doctest.h>

#include <random>

#include "error.hpp"
#include "orchestrator.hpp"
#include "rule_controllers.hpp"

using namespace vlmlight;

TEST_CASE("built-in scenarios load and bad documents are rejected") {
  for (const auto& name : builtin_scenario_names()) {
    const auto s = builtin_scenario(name);
    CHECK(s.name == name);
    CHECK(s.topology.movement_count() <= kMaxMovements);
  }
  CHECK_THROWS_AS(load_scenario("{"), Error);
  CHECK_THROWS_AS(resolve_scenario("no-such-scenario"), Error);
}

TEST_CASE("Webster cycle formula and clamps") {
  // C = (1.5 L + 5) / (1 - Y): L = 20, Y = 0.5 -> 70.
  CHECK(webster_cycle(0.5, 20.0, 4) == doctest::Approx(70.0));
  CHECK(webster_cycle(0.99, 20.0, 4) == doctest::Approx(kWebsterMaxCycle));
  CHECK(webster_cycle(0.0, 20.0, 4) == doctest::Approx(52.0));  // 13 s per phase floor
}

TEST_CASE("FixTime rotates every 30 s") {
  CHECK(fixtime_decide(0.0, 4) == 1);
  CHECK(fixtime_decide(29.9, 4) == 1);
  CHECK(fixtime_decide(33.0, 4) == 2);
  CHECK(fixtime_decide(4 * 33.0 + 1.0, 4) == 1);
}

TEST_CASE("episodes conserve vehicles and are reproducible") {
  const auto s = builtin_scenario("massy");
  ControllerSpec spec;
  spec.kind = "maxpressure";
  EpisodeOptions o;
  o.check_invariants = true;
  const auto a = run_episode(s, spec, 8, o);
  const auto b = run_episode(s, spec, 8, o);
  CHECK(a.spawned == a.exited + a.in_world);
  CHECK(a.violations.empty());
  CHECK(format_traces(a.traces) == format_traces(b.traces));
  CHECK(a.records.size() == b.records.size());
}

TEST_CASE("fuzzed timing: all controllers keep the signal invariants") {
  std::mt19937_64 rng(17);
  for (const char* name : {"songdo", "massy", "yaumatei"}) {
    for (const auto& kind : {"fixtime", "webster", "maxpressure", "vlmlight"}) {
      ControllerSpec spec;
      spec.kind = kind;
      EpisodeOptions o;
      o.check_invariants = true;
      o.delta_t = 1.0 + static_cast<double>(rng() % 10);
      o.t_max = o.delta_t * 40;
      o.warmup = 0.0;
      const auto ep = run_episode(builtin_scenario(name), spec, rng() % 1000, o);
      CHECK_MESSAGE(ep.violations.empty(), kind, " on ", name, ": ", ep.violations.empty() ? "" : ep.violations[0]);
    }
  }
}
