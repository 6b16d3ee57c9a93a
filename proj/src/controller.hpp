#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "signal.hpp"
#include "world.hpp"

namespace vlmlight {

/// What a controller sees at a decision tick.
struct DecisionContext {
  const WorldState& world;
  const SignalState& signal;
  const std::vector<PhaseId>& feasible;
  double now = 0.0;
  double last_decision = 0.0;  // time of the previous tick (== now on the first)
};

class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  /// Must return a member of ctx.feasible.
  virtual PhaseId decide(const DecisionContext& ctx) = 0;
};

}  // namespace vlmlight
