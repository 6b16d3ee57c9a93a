#pragma once

#include <array>
#include <deque>

#include "signal.hpp"
#include "world.hpp"

namespace vlmlight {

inline constexpr int kFeatureDim = 7;
inline constexpr int kFrames = 5;
inline constexpr int kTokens = kMaxMovements;

/// m_i^t = [F, O_max, O_mean, I_s, L, I_cg, I_mg].
using MovementFeature = std::array<double, kFeatureDim>;

/// One frame J_t: 12 movement rows, zero rows past the topology's M.
using Frame = std::array<MovementFeature, kTokens>;

/// S_t, frames ordered oldest first. Flat row-major [frame][movement][feature].
struct StateTensor {
  std::array<double, kFrames * kTokens * kFeatureDim> data{};

  double& at(int frame, int token, int feature) {
    return data[static_cast<size_t>((frame * kTokens + token) * kFeatureDim + feature)];
  }
  double at(int frame, int token, int feature) const {
    return data[static_cast<size_t>((frame * kTokens + token) * kFeatureDim + feature)];
  }
};

MovementFeature encode_movement(const WorldState& world, MovementId movement, const SignalState& signal, double since);

/// Frame over every movement of the world's topology.
Frame encode_frame(const WorldState& world, const SignalState& signal, double since);

/// Stacks the last five frames; shorter histories replicate the earliest
/// frame backwards. Throws on an empty history.
StateTensor build_state(const std::deque<Frame>& history);

/// Rolling window of the frames seen so far in an episode.
class FrameHistory {
 public:
  void push(const Frame& frame);
  StateTensor state() const { return build_state(frames_); }
  bool empty() const { return frames_.empty(); }
  void clear() { frames_.clear(); }

 private:
  std::deque<Frame> frames_;
};

/// Negative mean waiting count over the topology's real movements.
double compute_reward(const WorldState& world);

}  // namespace vlmlight
