#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rl/policy_net.hpp"
#include "topology.hpp"

namespace vlmlight {

struct PPOConfig {
  double clip = 0.2;
  double value_coef = 0.5;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double lr = 1e-3;  // decays linearly to zero over training
  int batch = 64;
  int buffer = 3000;  // transitions per update, across all environments
  int envs = 30;
  int epochs = 10;
  long total_steps = 100000;
  double max_grad_norm = 0.5;
  double reward_scale = 0.05;  // applied to rewards before GAE; the curve reports raw rewards
  double delta_t = 5.0;
  double dt = 0.5;
  double t_max = 600.0;
  NetConfig net;

  /// Throws Error(InvalidArgument) when a field is out of range.
  void validate() const;
};

/// GAE over one trajectory segment. `bootstrap` is V of the state after the
/// last reward (0 for a true terminal). Returns (advantages, returns).
std::pair<std::vector<double>, std::vector<double>> gae_advantages(const std::vector<double>& rewards,
                                                                   const std::vector<double>& values,
                                                                   double bootstrap, double gamma,
                                                                   double lambda);

struct PPOLosses {
  double policy = 0.0;  // clipped surrogate, to be maximised
  double value = 0.0;   // mean squared error
  double total = 0.0;   // -policy + value_coef * value
  std::vector<double> d_logp;   // d total / d log pi(a_i)
  std::vector<double> d_value;  // d total / d V_i
};

/// Loss terms from per-sample quantities; no network involved.
PPOLosses ppo_losses(const std::vector<double>& logp, const std::vector<double>& old_logp,
                     const std::vector<double>& advantages, const std::vector<double>& values,
                     const std::vector<double>& returns, double clip, double value_coef);

/// A minibatch of stored transitions.
struct PPOBatch {
  std::vector<double> states;      // size n * 420
  std::vector<std::uint8_t> masks;  // size n * phases, 1 = feasible
  std::vector<int> actions;        // phase ids
  std::vector<double> old_logp;
  std::vector<double> advantages;
  std::vector<double> returns;
  int size() const { return static_cast<int>(actions.size()); }
};

/// Runs the network on `batch`, returns the losses and (when `grad` is set)
/// accumulates d total / d theta into it. Throws Error(Numeric) on a
/// non-finite loss.
PPOLosses ppo_batch_loss(const PolicyNet& net, const PPOBatch& batch, double clip, double value_coef,
                         ParamVector* grad);

double linear_lr(double lr0, double progress);

/// Adam with the usual bias correction.
class Adam {
 public:
  explicit Adam(size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(ParamVector& params, const ParamVector& grad, double lr);

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

struct UpdateStat {
  int update = 0;
  long steps = 0;
  double mean_reward = 0.0;  // raw per-step reward averaged over the buffer
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  PolicyNet net;
  std::vector<UpdateStat> curve;
  std::vector<double> episode_rewards;  // mean raw reward of each finished episode, in completion order
};

using TrainProgress = std::function<void(const UpdateStat&)>;

/// PPO on the scenario with `envs` environments stepping in lockstep. Fully
/// determined by (scenario, config, seed).
TrainResult train(const Scenario& scenario, const PPOConfig& config, std::uint64_t seed,
                  const TrainProgress& progress = {});

/// Reward curve as CSV: update,steps,mean_reward,policy_loss,value_loss,lr.
std::string format_reward_curve(const std::vector<UpdateStat>& curve);

/// Environment seeds used for training never overlap evaluation seeds below
/// this offset.
inline constexpr std::uint64_t kTrainSeedOffset = 1000000;

}  // namespace vlmlight
