#pragma once

#include <optional>
#include <vector>

#include "topology.hpp"

namespace vlmlight {

inline constexpr double kMinGreen = 10.0;
inline constexpr double kYellow = 3.0;

enum class LightColor { Red, Yellow, Green };

/// One green interval. `end` is the instant the following yellow started;
/// an open interval (still green) has no end.
struct GreenInterval {
  PhaseId phase = 0;
  double start = 0.0;
  std::optional<double> end;
};

struct SignalState {
  PhaseId current_phase = 1;
  double green_elapsed = 0.0;
  double yellow_remaining = 0.0;
  std::optional<PhaseId> pending_phase;
  double now = 0.0;
  std::vector<GreenInterval> history;

  bool in_yellow() const { return yellow_remaining > 0.0; }
};

SignalState initial_signal(PhaseId first_phase = 1, double now = 0.0);

/// The feasible action set at this instant. Never empty.
std::vector<PhaseId> feasible_actions(const SignalState& signal, int phase_count);
bool is_feasible(const SignalState& signal, int phase_count, PhaseId action);

/// Executes a control action. Keeping the current phase extends its green;
/// any other phase starts the yellow transition. Throws Error(InvalidArgument)
/// with "min-green violation" or "infeasible action" when `action` is not in
/// the feasible set.
SignalState apply_action(const SignalState& signal, int phase_count, PhaseId action);

/// Advances the timers by dt; a yellow that expires inside the tick completes
/// the switch at the exact expiry instant.
SignalState tick_signal(const SignalState& signal, double dt);

/// Colour shown to a movement. During yellow, movements kept by the pending
/// phase stay green, the rest of the old phase shows yellow.
LightColor movement_color(const SignalState& signal, const Topology& topology, MovementId movement);

}  // namespace vlmlight
