#include "rl/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>

#include "error.hpp"
#include "numfmt.hpp"
#include "signal.hpp"
#include "world.hpp"

namespace vlmlight {

void PPOConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) fail(ErrorKind::InvalidArgument, std::string("ppo config: ") + what);
  };
  need(clip > 0.0 && clip < 1.0, "clip must lie in (0, 1)");
  need(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1]");
  need(gae_lambda > 0.0 && gae_lambda <= 1.0, "gae lambda must lie in (0, 1]");
  need(lr > 0.0, "learning rate must be positive");
  need(batch >= 1 && buffer >= batch, "batch must be positive and no larger than the buffer");
  need(envs >= 1 && buffer % envs == 0, "buffer must be a multiple of the environment count");
  need(epochs >= 1, "epochs must be positive");
  need(total_steps >= 1, "total steps must be positive");
  need(max_grad_norm > 0.0, "max grad norm must be positive");
  need(reward_scale > 0.0, "reward scale must be positive");
  need(delta_t > 0.0 && dt > 0.0 && t_max >= delta_t, "timing must satisfy 0 < dt, 0 < delta_t <= t_max");
}

std::pair<std::vector<double>, std::vector<double>> gae_advantages(const std::vector<double>& rewards,
                                                                   const std::vector<double>& values,
                                                                   double bootstrap, double gamma,
                                                                   double lambda) {
  if (rewards.size() != values.size()) fail(ErrorKind::InvalidArgument, "gae: rewards and values differ in length");
  const size_t n = rewards.size();
  std::vector<double> adv(n), ret(n);
  double next_value = bootstrap;
  double running = 0.0;
  for (size_t i = n; i-- > 0;) {
    const double delta = rewards[i] + gamma * next_value - values[i];
    running = delta + gamma * lambda * running;
    adv[i] = running;
    ret[i] = running + values[i];
    next_value = values[i];
  }
  return {adv, ret};
}

PPOLosses ppo_losses(const std::vector<double>& logp, const std::vector<double>& old_logp,
                     const std::vector<double>& advantages, const std::vector<double>& values,
                     const std::vector<double>& returns, double clip, double value_coef) {
  const size_t n = logp.size();
  if (n == 0) fail(ErrorKind::InvalidArgument, "ppo: empty batch");
  if (old_logp.size() != n || advantages.size() != n || values.size() != n || returns.size() != n)
    fail(ErrorKind::InvalidArgument, "ppo: batch fields differ in length");
  PPOLosses out;
  out.d_logp.assign(n, 0.0);
  out.d_value.assign(n, 0.0);
  const double inv = 1.0 / static_cast<double>(n);
  for (size_t i = 0; i < n; ++i) {
    const double ratio = std::exp(logp[i] - old_logp[i]);
    const double a = advantages[i];
    const double unclipped = ratio * a;
    const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip) * a;
    // The gradient flows only through the unclipped branch when it is the minimum.
    if (unclipped <= clipped) {
      out.policy += unclipped * inv;
      out.d_logp[i] = -unclipped * inv;
    } else {
      out.policy += clipped * inv;
    }
    const double err = values[i] - returns[i];
    out.value += err * err * inv;
    out.d_value[i] = value_coef * 2.0 * err * inv;
  }
  out.total = -out.policy + value_coef * out.value;
  if (!std::isfinite(out.total)) fail(ErrorKind::Numeric, "ppo: non-finite loss");
  return out;
}

PPOLosses ppo_batch_loss(const PolicyNet& net, const PPOBatch& batch, double clip, double value_coef,
                         ParamVector* grad) {
  const int n = batch.size();
  const int phases = net.config().phases;
  NetCache cache;
  net.forward(batch.states.data(), n, cache);

  std::vector<double> logp(static_cast<size_t>(n)), values(static_cast<size_t>(n));
  std::vector<std::vector<double>> logsm(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::vector<bool> mask(static_cast<size_t>(phases));
    for (int j = 0; j < phases; ++j) mask[static_cast<size_t>(j)] = batch.masks[static_cast<size_t>(i * phases + j)] != 0;
    logsm[static_cast<size_t>(i)] = masked_log_softmax(cache.logits.row(i).data(), phases, mask);
    logp[static_cast<size_t>(i)] = logsm[static_cast<size_t>(i)][static_cast<size_t>(batch.actions[static_cast<size_t>(i)] - 1)];
    values[static_cast<size_t>(i)] = cache.values(i);
  }
  PPOLosses losses = ppo_losses(logp, batch.old_logp, batch.advantages, values, batch.returns, clip, value_coef);
  if (!grad) return losses;

  RowMat dlogits = RowMat::Zero(n, phases);
  Eigen::VectorXd dvalues(n);
  for (int i = 0; i < n; ++i) {
    const double g = losses.d_logp[static_cast<size_t>(i)];
    const int a = batch.actions[static_cast<size_t>(i)] - 1;
    for (int j = 0; j < phases; ++j) {
      const double lp = logsm[static_cast<size_t>(i)][static_cast<size_t>(j)];
      if (!std::isfinite(lp)) continue;  // masked out
      dlogits(i, j) = g * ((j == a ? 1.0 : 0.0) - std::exp(lp));
    }
    dvalues(i) = losses.d_value[static_cast<size_t>(i)];
  }
  net.backward(cache, dlogits, dvalues, *grad);
  return losses;
}

double linear_lr(double lr0, double progress) { return lr0 * std::max(0.0, 1.0 - progress); }

Adam::Adam(size_t n, double beta1, double beta2, double eps)
    : m_(n, 0.0), v_(n, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParamVector& params, const ParamVector& grad, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

namespace {

constexpr size_t kStateSize = static_cast<size_t>(kFrames * kTokens * kFeatureDim);

// One training environment: a world, its signal, and the frame history the
// policy observes.
struct TrainEnv {
  WorldState world;
  SignalState signal;
  FrameHistory history;
  double last_decision = 0.0;
  double reward_sum = 0.0;
  int steps = 0;

  void reset(const std::shared_ptr<const Topology>& topo, const DemandProfile& demand, std::uint64_t seed) {
    world = make_world(topo, demand, seed);
    signal = initial_signal();
    history.clear();
    last_decision = 0.0;
    reward_sum = 0.0;
    steps = 0;
  }

  // Records the frame for the current instant and returns S_t.
  StateTensor observe() {
    history.push(encode_frame(world, signal, last_decision));
    return history.state();
  }
};

}  // namespace

TrainResult train(const Scenario& scenario, const PPOConfig& config, std::uint64_t seed,
                  const TrainProgress& progress) {
  config.validate();
  NetConfig net_cfg = config.net;
  net_cfg.phases = scenario.topology.phase_count();
  TrainResult result{PolicyNet(net_cfg, seed), {}, {}};
  PolicyNet& net = result.net;
  const int phases = net_cfg.phases;
  const int envs = config.envs;
  const int horizon = config.buffer / envs;
  const long updates = (config.total_steps + config.buffer - 1) / config.buffer;
  const auto topo = std::make_shared<const Topology>(scenario.topology);

  std::mt19937_64 rng(seed ^ 0xA5A5A5A55A5A5A5AULL);
  std::uint64_t next_env_seed = kTrainSeedOffset + (seed % 1000) * 100000;
  std::vector<TrainEnv> env(static_cast<size_t>(envs));
  std::vector<double> obs(static_cast<size_t>(envs) * kStateSize);
  auto observe_into = [&](int e) {
    const auto s = env[static_cast<size_t>(e)].observe();
    std::copy(s.data.begin(), s.data.end(), obs.begin() + static_cast<long>(static_cast<size_t>(e) * kStateSize));
  };
  for (int e = 0; e < envs; ++e) {
    env[static_cast<size_t>(e)].reset(topo, scenario.demand, next_env_seed++);
    observe_into(e);
  }

  const size_t n = static_cast<size_t>(config.buffer);
  std::vector<double> buf_states(n * kStateSize);
  std::vector<std::uint8_t> buf_masks(n * static_cast<size_t>(phases));
  std::vector<int> buf_actions(n);
  std::vector<double> buf_logp(n), buf_values(n), buf_rewards(n), buf_boot(n);
  std::vector<std::uint8_t> buf_done(n);
  std::vector<double> buf_adv(n), buf_ret(n);
  Adam adam(net.param_count());
  ParamVector grad(net.param_count());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  long steps_done = 0;

  for (long update = 0; update < updates; ++update) {
    double raw_reward_sum = 0.0;
    for (int t = 0; t < horizon; ++t) {
      NetCache cache;
      net.forward(obs.data(), envs, cache);
      for (int e = 0; e < envs; ++e) {
        auto& ev = env[static_cast<size_t>(e)];
        const size_t idx = static_cast<size_t>(t) * static_cast<size_t>(envs) + static_cast<size_t>(e);
        const auto feasible = feasible_actions(ev.signal, phases);
        std::vector<bool> mask(static_cast<size_t>(phases), false);
        for (PhaseId p : feasible) mask[static_cast<size_t>(p - 1)] = true;
        const auto logsm = masked_log_softmax(cache.logits.row(e).data(), phases, mask);
        double u = unit(rng);
        int action = feasible.back();
        for (PhaseId p : feasible) {
          u -= std::exp(logsm[static_cast<size_t>(p - 1)]);
          if (u < 0.0) {
            action = p;
            break;
          }
        }
        std::copy_n(obs.begin() + static_cast<long>(static_cast<size_t>(e) * kStateSize), kStateSize,
                    buf_states.begin() + static_cast<long>(idx * kStateSize));
        for (int j = 0; j < phases; ++j)
          buf_masks[idx * static_cast<size_t>(phases) + static_cast<size_t>(j)] = mask[static_cast<size_t>(j)] ? 1 : 0;
        buf_actions[idx] = action;
        buf_logp[idx] = logsm[static_cast<size_t>(action - 1)];
        buf_values[idx] = cache.values(e);
        if (!std::isfinite(buf_values[idx])) fail(ErrorKind::Numeric, "training diverged: non-finite value estimate");

        ev.signal = apply_action(ev.signal, phases, action);
        ev.last_decision = ev.world.clock;
        run_interval(ev.world, ev.signal, config.delta_t, config.dt);
        const double r = compute_reward(ev.world);
        raw_reward_sum += r;
        ev.reward_sum += r;
        ++ev.steps;
        buf_rewards[idx] = r * config.reward_scale;
        buf_done[idx] = 0;
        buf_boot[idx] = 0.0;
        const bool finished = ev.world.clock + 1e-9 >= config.t_max;
        if (finished) {
          // Time limit: bootstrap from the value of the final state.
          const auto final_state = ev.observe();
          buf_boot[idx] = net.evaluate(final_state).value;
          buf_done[idx] = 1;
          result.episode_rewards.push_back(ev.reward_sum / ev.steps);
          ev.reset(topo, scenario.demand, next_env_seed++);
        }
        observe_into(e);
      }
    }
    steps_done += static_cast<long>(n);

    // Values of the states following the rollout close the open segments.
    NetCache last;
    net.forward(obs.data(), envs, last);
    for (int e = 0; e < envs; ++e) {
      int start = 0;
      for (int t = 0; t < horizon; ++t) {
        const size_t idx = static_cast<size_t>(t) * static_cast<size_t>(envs) + static_cast<size_t>(e);
        const bool end = buf_done[idx] || t == horizon - 1;
        if (!end) continue;
        std::vector<double> r, v;
        for (int k = start; k <= t; ++k) {
          const size_t j = static_cast<size_t>(k) * static_cast<size_t>(envs) + static_cast<size_t>(e);
          r.push_back(buf_rewards[j]);
          v.push_back(buf_values[j]);
        }
        const double boot = buf_done[idx] ? buf_boot[idx] : last.values(e);
        auto [adv, ret] = gae_advantages(r, v, boot, config.gamma, config.gae_lambda);
        for (int k = start; k <= t; ++k) {
          const size_t j = static_cast<size_t>(k) * static_cast<size_t>(envs) + static_cast<size_t>(e);
          buf_adv[j] = adv[static_cast<size_t>(k - start)];
          buf_ret[j] = ret[static_cast<size_t>(k - start)];
        }
        start = t + 1;
      }
    }

    const double lr = linear_lr(config.lr, static_cast<double>(update) / static_cast<double>(updates));
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    double policy_loss = 0.0, value_loss = 0.0;
    int minibatches = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (size_t begin = 0; begin < n; begin += static_cast<size_t>(config.batch)) {
        const size_t end = std::min(n, begin + static_cast<size_t>(config.batch));
        PPOBatch mb;
        for (size_t k = begin; k < end; ++k) {
          const size_t j = order[k];
          mb.states.insert(mb.states.end(), buf_states.begin() + static_cast<long>(j * kStateSize),
                           buf_states.begin() + static_cast<long>((j + 1) * kStateSize));
          mb.masks.insert(mb.masks.end(), buf_masks.begin() + static_cast<long>(j * static_cast<size_t>(phases)),
                          buf_masks.begin() + static_cast<long>((j + 1) * static_cast<size_t>(phases)));
          mb.actions.push_back(buf_actions[j]);
          mb.old_logp.push_back(buf_logp[j]);
          mb.advantages.push_back(buf_adv[j]);
          mb.returns.push_back(buf_ret[j]);
        }
        // Per-minibatch advantage normalisation.
        const double mean = std::accumulate(mb.advantages.begin(), mb.advantages.end(), 0.0) / mb.size();
        double var = 0.0;
        for (double a : mb.advantages) var += (a - mean) * (a - mean);
        const double sd = mb.size() > 1 ? std::sqrt(var / (mb.size() - 1)) : 0.0;
        for (double& a : mb.advantages) a = (a - mean) / (sd + 1e-8);

        std::fill(grad.begin(), grad.end(), 0.0);
        const auto losses = ppo_batch_loss(net, mb, config.clip, config.value_coef, &grad);
        double norm = 0.0;
        for (double g : grad) norm += g * g;
        norm = std::sqrt(norm);
        if (!std::isfinite(norm)) fail(ErrorKind::Numeric, "training diverged: non-finite gradient");
        if (norm > config.max_grad_norm)
          for (double& g : grad) g *= config.max_grad_norm / norm;
        adam.step(net.params(), grad, lr);
        policy_loss += losses.policy;
        value_loss += losses.value;
        ++minibatches;
      }
    }

    UpdateStat stat;
    stat.update = static_cast<int>(update);
    stat.steps = steps_done;
    stat.mean_reward = raw_reward_sum / static_cast<double>(n);
    stat.policy_loss = policy_loss / minibatches;
    stat.value_loss = value_loss / minibatches;
    stat.lr = lr;
    result.curve.push_back(stat);
    if (progress) progress(stat);
  }
  return result;
}

std::string format_reward_curve(const std::vector<UpdateStat>& curve) {
  std::string out = "update,steps,mean_reward,policy_loss,value_loss,lr\n";
  for (const auto& s : curve) {
    out += std::to_string(s.update) + "," + std::to_string(s.steps) + "," + format_double(s.mean_reward) + "," +
           format_double(s.policy_loss) + "," + format_double(s.value_loss) + "," + format_double(s.lr) + "\n";
  }
  return out;
}

}  // namespace vlmlight
