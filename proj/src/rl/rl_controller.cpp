#include "rl/rl_controller.hpp"

#include "error.hpp"

namespace vlmlight {

RLController::RLController(std::shared_ptr<const PolicyNet> net) : net_(std::move(net)) {
  if (!net_) fail(ErrorKind::InvalidArgument, "rl controller needs a policy");
}

PhaseId RLController::decide(const DecisionContext& ctx) {
  if (net_->config().phases != ctx.world.topology->phase_count())
    fail(ErrorKind::Config, "policy was trained for " + std::to_string(net_->config().phases) +
                                " phases, scenario has " + std::to_string(ctx.world.topology->phase_count()));
  history_.push(encode_frame(ctx.world, ctx.signal, ctx.last_decision));
  return net_->greedy_action(history_.state(), ctx.feasible);
}

}  // namespace vlmlight
