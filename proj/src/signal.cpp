#include "signal.hpp"

#include <string>

#include "error.hpp"

namespace vlmlight {

namespace {
// Timers move in multiples of the dynamics step; this absorbs rounding.
constexpr double kTimeEps = 1e-9;
}  // namespace

SignalState initial_signal(PhaseId first_phase, double now) {
  SignalState s;
  s.current_phase = first_phase;
  s.now = now;
  s.history.push_back({first_phase, now, std::nullopt});
  return s;
}

std::vector<PhaseId> feasible_actions(const SignalState& signal, int phase_count) {
  if (signal.in_yellow() && signal.pending_phase) return {*signal.pending_phase};
  if (signal.green_elapsed + kTimeEps < kMinGreen) return {signal.current_phase};
  std::vector<PhaseId> all(static_cast<size_t>(phase_count));
  for (int i = 0; i < phase_count; ++i) all[static_cast<size_t>(i)] = i + 1;
  return all;
}

bool is_feasible(const SignalState& signal, int phase_count, PhaseId action) {
  for (PhaseId p : feasible_actions(signal, phase_count))
    if (p == action) return true;
  return false;
}

SignalState apply_action(const SignalState& signal, int phase_count, PhaseId action) {
  if (action < 1 || action > phase_count)
    fail(ErrorKind::InvalidArgument, "infeasible action: unknown phase " + std::to_string(action));
  if (signal.in_yellow()) {
    if (action != *signal.pending_phase)
      fail(ErrorKind::InvalidArgument, "infeasible action: transition to phase " +
                                           std::to_string(*signal.pending_phase) + " is committed");
    return signal;
  }
  if (action == signal.current_phase) return signal;
  if (signal.green_elapsed + kTimeEps < kMinGreen)
    fail(ErrorKind::InvalidArgument, "min-green violation: phase " + std::to_string(signal.current_phase) +
                                         " has been green for " + std::to_string(signal.green_elapsed) + " s");
  SignalState next = signal;
  next.yellow_remaining = kYellow;
  next.pending_phase = action;
  next.history.back().end = signal.now;
  return next;
}

SignalState tick_signal(const SignalState& signal, double dt) {
  SignalState next = signal;
  if (!next.in_yellow()) {
    next.green_elapsed += dt;
    next.now += dt;
    return next;
  }
  if (next.yellow_remaining > dt + kTimeEps) {
    next.yellow_remaining -= dt;
    next.now += dt;
    return next;
  }
  const double switch_at = next.now + next.yellow_remaining;
  next.green_elapsed = dt - next.yellow_remaining;
  if (next.green_elapsed < kTimeEps) next.green_elapsed = 0.0;
  next.yellow_remaining = 0.0;
  next.current_phase = *next.pending_phase;
  next.pending_phase.reset();
  next.history.push_back({next.current_phase, switch_at, std::nullopt});
  next.now += dt;
  return next;
}

LightColor movement_color(const SignalState& signal, const Topology& topology, MovementId movement) {
  const bool in_current = topology.phase_contains(signal.current_phase, movement);
  if (!signal.in_yellow()) return in_current ? LightColor::Green : LightColor::Red;
  if (!in_current) return LightColor::Red;
  return topology.phase_contains(*signal.pending_phase, movement) ? LightColor::Green : LightColor::Yellow;
}

}  // namespace vlmlight
