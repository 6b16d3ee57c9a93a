#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "agents/backend.hpp"
#include "controller.hpp"
#include "rl/policy_net.hpp"
#include "scene.hpp"

namespace vlmlight {

enum class ControlMode { RL, Deliberative };
std::string_view to_string(ControlMode mode);
ControlMode parse_control_mode(std::string_view text);

struct VerifyAttempt {
  int attempt = 0;
  std::optional<PhaseId> proposed;
  bool feasible = false;
  std::string reason;
};

/// Audit record of one decision tick.
struct DecisionTrace {
  double t = 0.0;
  std::string controller;
  ControlMode mode = ControlMode::RL;
  std::vector<PhaseId> feasible;
  std::vector<std::string> scenes;  // T_i, one per approach (VLMLight only)
  std::string phase_text;           // Agent_Phase output (empty when skipped)
  std::optional<PhaseId> llm_action;
  std::string rationale;
  std::vector<VerifyAttempt> attempts;
  PhaseId routine_action = 0;  // fast-branch proposal, computed every tick
  PhaseId final_action = 0;
  bool fallback = false;  // final action came from the fast branch after the deliberative branch failed
  std::string accepted;   // {"action": k} when the deliberative branch succeeded
  std::vector<std::string> notes;
};

nlohmann::json trace_to_json(const DecisionTrace& trace);
DecisionTrace trace_from_json(const nlohmann::json& j);
/// Newline-delimited JSON, one trace per line.
std::string format_traces(const std::vector<DecisionTrace>& traces);
std::vector<DecisionTrace> parse_traces(const std::string& text);

struct OrchestratorOptions {
  int n_check = 3;
  bool ablate_phase = false;  // Agent_Plan consumes the raw direction descriptions
  bool ablate_check = false;  // accept the plan unverified; infeasible -> fast branch at once
  bool llm_scene = false;     // ask the backend for T_i instead of the ground-truth template
  std::string objectives =
      "1. Give right of way to emergency and special vehicles, nearest to the stop line first.\n"
      "2. Otherwise serve the longest queues.\n"
      "3. Keep every choice within the feasible phase set.";
  std::string template_dir;  // empty = built-in templates

  void validate() const;
};

/// Routes to deliberation when the backend flags a critical condition. A
/// failing or unreadable backend selects RL and explains why in `note`.
ControlMode select_mode(const std::vector<SceneDescription>& descriptions, Backend& backend,
                        const OrchestratorOptions& options, std::string* note = nullptr);

struct PlanResult {
  std::optional<PhaseId> action;  // empty when the reply held no usable action
  std::string rationale;
  std::string raw;
  std::string error;
};

/// Agent_Plan over phase-level descriptions.
PlanResult plan_signal(const std::vector<PhaseDescription>& phases, PhaseId current, Backend& backend,
                       const OrchestratorOptions& options);
/// Agent_Plan over raw direction descriptions (Agent_Phase disabled).
PlanResult plan_signal_directional(const std::vector<SceneDescription>& scenes, const Topology& topology,
                                   PhaseId current, Backend& backend, const OrchestratorOptions& options);

struct VerifyResult {
  std::optional<PhaseId> accepted;  // empty -> caller executes the fast-branch action
  std::vector<VerifyAttempt> attempts;
  std::string accepted_json;
};

/// Up to n_check attempts: the plan proposal first, then Agent_Check
/// alternatives. Backend failures count as failed attempts.
VerifyResult verify_action(std::optional<PhaseId> proposal, const std::string& plan_error,
                           const std::vector<PhaseId>& feasible, PhaseId current, const std::string& phases_text,
                           Backend& backend, const OrchestratorOptions& options);

/// Controllers that produce a full trace per decision.
class TracingController : public Controller {
 public:
  virtual const DecisionTrace& last_trace() const = 0;
};

/// The dual-branch meta-controller: a fast routine controller plus the
/// deliberative agent chain behind a mode selector.
class VLMLightController final : public TracingController {
 public:
  VLMLightController(std::unique_ptr<Controller> routine, std::unique_ptr<Backend> backend,
                     std::shared_ptr<const Topology> topology, OrchestratorOptions options);

  std::string name() const override { return "vlmlight"; }
  PhaseId decide(const DecisionContext& ctx) override;
  const DecisionTrace& last_trace() const override { return trace_; }

 private:
  std::vector<SceneDescription> describe(const WorldState& world, DecisionTrace& trace);

  std::unique_ptr<Controller> routine_;
  std::unique_ptr<Backend> backend_;
  std::shared_ptr<const Topology> topology_;
  OrchestratorOptions options_;
  DecisionTrace trace_;
};

/// Controller factory input. kind: fixtime | webster | maxpressure | rl | vlmlight.
struct ControllerSpec {
  std::string kind = "fixtime";
  std::shared_ptr<const PolicyNet> policy;  // rl; also the vlmlight fast branch when set
  BackendConfig backend;
  OrchestratorOptions orchestrator;
  /// Test hook: replaces the backend built from `backend`.
  std::function<std::unique_ptr<Backend>()> backend_factory;
};

std::vector<std::string> controller_kinds();
/// vlmlight falls back to MaxPressure as its fast branch when no policy is
/// given.
std::unique_ptr<Controller> make_controller(const ControllerSpec& spec, std::shared_ptr<const Topology> topology);

struct EpisodeOptions {
  double t_max = 600.0;
  double delta_t = 5.0;
  double dt = 0.5;
  double warmup = 60.0;  // emergencies are scheduled after it; metrics skip earlier entries
  bool log_events = false;
  bool check_invariants = false;
  double settle_in = 5.0;

  void validate() const;
};

struct EpisodeResult {
  std::uint64_t seed = 0;
  std::vector<VehicleRecord> records;
  std::vector<DecisionTrace> traces;
  std::vector<GreenInterval> signal_history;
  std::vector<Event> events;
  std::uint64_t spawned = 0;
  std::uint64_t exited = 0;
  std::uint64_t in_world = 0;
  std::vector<std::string> violations;  // filled when check_invariants is set
  /// Final world state; kept for snapshots.
  std::shared_ptr<const WorldState> world;
  SignalState signal;
};

/// One episode: at every delta_t tick the controller picks a feasible phase,
/// then world and signal advance in dt steps. Agent failures never abort.
EpisodeResult run_episode(const Scenario& scenario, const ControllerSpec& spec, std::uint64_t seed,
                          const EpisodeOptions& options = {});

/// Timing and safety checks over a finished episode's signal history and
/// traces (min green, exact yellow, executed-action feasibility).
std::vector<std::string> check_signal_history(const std::vector<GreenInterval>& history,
                                              const std::vector<DecisionTrace>& traces);

}  // namespace vlmlight
