#pragma once

#include <vector>

#include "controller.hpp"

namespace vlmlight {

inline constexpr double kFixTimePhase = 30.0;
inline constexpr double kSaturationFlowPerLane = 0.5;  // veh/s, 1800 veh/h
inline constexpr double kLostTimePerPhase = 5.0;       // 3 s yellow + 2 s start-up
inline constexpr double kWebsterMaxCycle = 120.0;
inline constexpr double kWebsterMinCyclePerPhase = 13.0;
inline constexpr double kWebsterSaturatedY = 0.95;
inline constexpr double kWebsterReplan = 300.0;
inline constexpr double kWebsterFirstPlan = 60.0;

/// Phase shown by FixTime-30 at `clock`.
PhaseId fixtime_decide(double clock, int phase_count);

struct WebsterPlan {
  double cycle = 0.0;
  std::vector<double> greens;  // effective green per phase, index p-1
  double computed_at = 0.0;
  double lost_time = 0.0;
  double critical_sum = 0.0;
};

double webster_cycle(double critical_sum, double lost_time, int phase_count);

/// Plan from per-movement flows (veh/s, index m-1).
WebsterPlan webster_plan(const std::vector<double>& flows, const Topology& topology, double now);

/// Upstream queue minus the mean downstream lane queue, summed over the
/// phase's movements.
double compute_pressure(const WorldState& world, PhaseId phase);

/// Highest pressure among `feasible`; ties keep the current phase, then the
/// lowest id.
PhaseId maxpressure_decide(const WorldState& world, const SignalState& signal, const std::vector<PhaseId>& feasible);

class FixTimeController final : public Controller {
 public:
  std::string name() const override { return "fixtime"; }
  PhaseId decide(const DecisionContext& ctx) override;
};

class WebsterController final : public Controller {
 public:
  std::string name() const override { return "webster"; }
  PhaseId decide(const DecisionContext& ctx) override;
  const WebsterPlan& plan() const { return plan_; }

 private:
  WebsterPlan plan_;
  bool planned_ = false;
  double next_replan_ = kWebsterFirstPlan;
};

class MaxPressureController final : public Controller {
 public:
  std::string name() const override { return "maxpressure"; }
  PhaseId decide(const DecisionContext& ctx) override;
};

/// Arrival rate per movement (veh/s) over [from, to).
std::vector<double> arrival_flows(const WorldState& world, double from, double to);

}  // namespace vlmlight
