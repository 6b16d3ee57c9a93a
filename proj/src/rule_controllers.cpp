#include "rule_controllers.hpp"

#include <algorithm>
#include <cmath>

namespace vlmlight {

namespace {

bool contains(const std::vector<PhaseId>& set, PhaseId p) { return std::find(set.begin(), set.end(), p) != set.end(); }

PhaseId hold_or_first(const SignalState& signal, const std::vector<PhaseId>& feasible) {
  return contains(feasible, signal.current_phase) ? signal.current_phase : feasible.front();
}

}  // namespace

PhaseId fixtime_decide(double clock, int phase_count) {
  const auto slot = static_cast<long long>(std::floor(clock / kFixTimePhase));
  return static_cast<PhaseId>(slot % phase_count) + 1;
}

double webster_cycle(double critical_sum, double lost_time, int phase_count) {
  if (critical_sum >= kWebsterSaturatedY) return kWebsterMaxCycle;
  const double raw = (1.5 * lost_time + 5.0) / (1.0 - critical_sum);
  return std::clamp(raw, kWebsterMinCyclePerPhase * phase_count, kWebsterMaxCycle);
}

WebsterPlan webster_plan(const std::vector<double>& flows, const Topology& topology, double now) {
  const int n = topology.phase_count();
  WebsterPlan plan;
  plan.computed_at = now;
  plan.lost_time = kLostTimePerPhase * n;

  std::vector<double> y(static_cast<size_t>(n), 0.0);
  for (const auto& ph : topology.phases) {
    double worst = 0.0;
    for (MovementId m : ph.movements) {
      const auto& mv = topology.movement(m);
      const double f = static_cast<size_t>(m - 1) < flows.size() ? flows[static_cast<size_t>(m - 1)] : 0.0;
      worst = std::max(worst, f / (kSaturationFlowPerLane * static_cast<double>(mv.lanes.size())));
    }
    y[static_cast<size_t>(ph.id - 1)] = worst;
    plan.critical_sum += worst;
  }
  plan.cycle = webster_cycle(plan.critical_sum, plan.lost_time, n);
  const double budget = plan.cycle - plan.lost_time;
  plan.greens.assign(static_cast<size_t>(n), budget / n);
  if (plan.critical_sum <= 0.0) return plan;

  // Proportional split with a floor; phases pinned at the floor leave the
  // remaining budget to the others. The floor cannot exceed an equal share.
  const double floor = std::min(kMinGreen, budget / n);
  std::vector<bool> pinned(static_cast<size_t>(n), false);
  for (int pass = 0; pass <= n; ++pass) {
    double free_budget = budget;
    double free_y = 0.0;
    for (int j = 0; j < n; ++j) {
      if (pinned[static_cast<size_t>(j)])
        free_budget -= floor;
      else
        free_y += y[static_cast<size_t>(j)];
    }
    bool changed = false;
    for (int j = 0; j < n; ++j) {
      auto& g = plan.greens[static_cast<size_t>(j)];
      if (pinned[static_cast<size_t>(j)]) {
        g = floor;
        continue;
      }
      g = free_y > 0.0 ? y[static_cast<size_t>(j)] / free_y * free_budget : free_budget;
      if (g < floor) {
        pinned[static_cast<size_t>(j)] = true;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return plan;
}

double compute_pressure(const WorldState& world, PhaseId phase) {
  const auto& topo = *world.topology;
  const auto queues = queue_lengths(world);
  double pressure = 0.0;
  for (MovementId m : topo.phase(phase).movements) {
    const auto& mv = topo.movement(m);
    const auto& out_ids = world.outgoing_lane_ids[static_cast<size_t>(mv.to - 1)];
    double downstream = 0.0;
    for (int id : out_ids)
      for (const auto& v : world.lane(id).vehicles)
        if (v.speed < world.options.dynamics.halt_speed) downstream += 1.0;
    downstream /= static_cast<double>(out_ids.size());
    pressure += static_cast<double>(queues[static_cast<size_t>(m - 1)]) - downstream;
  }
  return pressure;
}

PhaseId maxpressure_decide(const WorldState& world, const SignalState& signal, const std::vector<PhaseId>& feasible) {
  std::vector<double> pressure;
  pressure.reserve(feasible.size());
  for (PhaseId p : feasible) pressure.push_back(compute_pressure(world, p));
  const double top = *std::max_element(pressure.begin(), pressure.end());
  PhaseId best = 0;
  for (size_t i = 0; i < feasible.size(); ++i) {
    if (pressure[i] != top) continue;
    if (feasible[i] == signal.current_phase) return feasible[i];
    if (best == 0 || feasible[i] < best) best = feasible[i];
  }
  return best;
}

std::vector<double> arrival_flows(const WorldState& world, double from, double to) {
  std::vector<double> flows(world.arrivals.size(), 0.0);
  const double span = to - from;
  if (!(span > 0.0)) return flows;
  for (size_t m = 0; m < world.arrivals.size(); ++m) {
    const auto& a = world.arrivals[m];
    const auto lo = std::lower_bound(a.begin(), a.end(), from);
    const auto hi = std::lower_bound(a.begin(), a.end(), to);
    flows[m] = static_cast<double>(std::distance(lo, hi)) / span;
  }
  return flows;
}

PhaseId FixTimeController::decide(const DecisionContext& ctx) {
  const PhaseId want = fixtime_decide(ctx.now, ctx.world.topology->phase_count());
  return contains(ctx.feasible, want) ? want : hold_or_first(ctx.signal, ctx.feasible);
}

PhaseId WebsterController::decide(const DecisionContext& ctx) {
  const auto& topo = *ctx.world.topology;
  if (!planned_) {
    plan_ = webster_plan(std::vector<double>(static_cast<size_t>(topo.movement_count()), 0.0), topo, ctx.now);
    planned_ = true;
  }
  if (ctx.now >= next_replan_) {
    const double from = std::max(0.0, ctx.now - kWebsterReplan);
    plan_ = webster_plan(arrival_flows(ctx.world, from, ctx.now), topo, ctx.now);
    next_replan_ = ctx.now + kWebsterReplan;
  }
  double pos = std::fmod(ctx.now - plan_.computed_at, plan_.cycle);
  PhaseId want = topo.phase_count();
  for (int j = 0; j < topo.phase_count(); ++j) {
    const double slot = plan_.greens[static_cast<size_t>(j)] + kLostTimePerPhase;
    if (pos < slot) {
      want = j + 1;
      break;
    }
    pos -= slot;
  }
  return contains(ctx.feasible, want) ? want : hold_or_first(ctx.signal, ctx.feasible);
}

PhaseId MaxPressureController::decide(const DecisionContext& ctx) {
  return maxpressure_decide(ctx.world, ctx.signal, ctx.feasible);
}

}  // namespace vlmlight
