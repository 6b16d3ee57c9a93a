#include "rl/features.hpp"

#include <algorithm>

#include "error.hpp"

namespace vlmlight {

MovementFeature encode_movement(const WorldState& world, MovementId movement, const SignalState& signal,
                                double since) {
  const auto& topo = *world.topology;
  const auto& mv = topo.movement(movement);
  const auto stats = movement_stats(world, movement, since);
  const bool green = movement_color(signal, topo, movement) == LightColor::Green;
  const bool min_green_met = green && !signal.in_yellow() && signal.green_elapsed + 1e-9 >= kMinGreen;
  return {stats.flow,
          stats.occ_max,
          stats.occ_mean,
          static_cast<double>(static_cast<int>(mv.turn)),
          static_cast<double>(mv.lanes.size()),
          green ? 1.0 : 0.0,
          min_green_met ? 1.0 : 0.0};
}

Frame encode_frame(const WorldState& world, const SignalState& signal, double since) {
  Frame f{};
  for (const auto& m : world.topology->movements) f[static_cast<size_t>(m.id - 1)] = encode_movement(world, m.id, signal, since);
  return f;
}

StateTensor build_state(const std::deque<Frame>& history) {
  if (history.empty()) fail(ErrorKind::InvalidArgument, "build_state: no frames");
  StateTensor s;
  const int n = static_cast<int>(history.size());
  for (int k = 0; k < kFrames; ++k) {
    // Slot k holds frame t-(4-k); missing older frames repeat the earliest.
    const int idx = std::max(0, n - kFrames + k);
    const Frame& f = history[static_cast<size_t>(idx)];
    for (int i = 0; i < kTokens; ++i)
      for (int j = 0; j < kFeatureDim; ++j) s.at(k, i, j) = f[static_cast<size_t>(i)][static_cast<size_t>(j)];
  }
  return s;
}

void FrameHistory::push(const Frame& frame) {
  frames_.push_back(frame);
  while (frames_.size() > static_cast<size_t>(kFrames)) frames_.pop_front();
}

double compute_reward(const WorldState& world) {
  const auto q = queue_lengths(world);
  if (q.empty()) return 0.0;
  double total = 0.0;
  for (int v : q) total += v;
  return total > 0.0 ? -total / static_cast<double>(q.size()) : 0.0;
}

}  // namespace vlmlight
