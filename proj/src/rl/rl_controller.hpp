#pragma once

#include <memory>

#include "controller.hpp"
#include "rl/features.hpp"
#include "rl/policy_net.hpp"

namespace vlmlight {

/// Greedy PPO policy. Keeps the frame history of the current episode, so one
/// instance serves one episode.
class RLController final : public Controller {
 public:
  explicit RLController(std::shared_ptr<const PolicyNet> net);

  std::string name() const override { return "rl"; }
  PhaseId decide(const DecisionContext& ctx) override;

 private:
  std::shared_ptr<const PolicyNet> net_;
  FrameHistory history_;
};

}  // namespace vlmlight
