#include <doctest.h>

#include "error.hpp"
#include "signal.hpp"

using namespace vlmlight;

namespace {
SignalState run(SignalState s, double secs) {
  for (int i = 0; i < static_cast<int>(secs / 0.5 + 0.5); ++i) s = tick_signal(s, 0.5);
  return s;
}
}  // namespace

TEST_CASE("feasible set holds only the current phase before min green") {
  auto s = initial_signal(1);
  CHECK(feasible_actions(s, 4) == std::vector<PhaseId>{1});
  s = run(s, 9.5);
  CHECK(feasible_actions(s, 4) == std::vector<PhaseId>{1});
  s = run(s, 0.5);
  CHECK(feasible_actions(s, 4) == std::vector<PhaseId>{1, 2, 3, 4});
}

TEST_CASE("switching before min green is rejected") {
  auto s = run(initial_signal(1), 5.0);
  CHECK_THROWS_WITH_AS(apply_action(s, 4, 2), doctest::Contains("min-green"), Error);
  CHECK_THROWS_AS(apply_action(s, 4, 7), Error);
}

TEST_CASE("yellow lasts exactly three seconds and the new phase starts at expiry") {
  auto s = run(initial_signal(1), 10.0);
  s = apply_action(s, 4, 3);
  CHECK(s.in_yellow());
  CHECK(feasible_actions(s, 4) == std::vector<PhaseId>{3});  // locked to the pending phase during amber
  s = run(s, 2.5);
  CHECK(s.in_yellow());
  s = run(s, 0.5);
  CHECK_FALSE(s.in_yellow());
  CHECK(s.current_phase == 3);
  REQUIRE(s.history.size() == 2);
  CHECK(*s.history[0].end == doctest::Approx(10.0));
  CHECK(s.history[1].start - *s.history[0].end == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("keeping the current phase extends green without a yellow") {
  auto s = run(initial_signal(2), 12.0);
  s = apply_action(s, 4, 2);
  CHECK_FALSE(s.in_yellow());
  CHECK(s.history.size() == 1);
}
