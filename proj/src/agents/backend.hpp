#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "scene.hpp"

namespace vlmlight {

enum class AgentRole { Scene, ModeSelector, Phase, Plan, Check };
std::string_view to_string(AgentRole role);
AgentRole parse_agent_role(std::string_view text);

/// One template per role, shipped as an editable text asset. Placeholders are
/// written {{name}}.
struct PromptTemplate {
  AgentRole role = AgentRole::Scene;
  std::string text;

  std::vector<std::string> placeholders() const;
};

/// Built-in template for a role, or the file `<dir>/<role>.txt` when `dir` is
/// non-empty.
PromptTemplate load_template(AgentRole role, const std::string& dir = {});

/// Substitutes every placeholder. Throws Error(InvalidArgument) when a
/// placeholder has no value.
std::string fill_template(const PromptTemplate& tmpl, const std::map<std::string, std::string>& values);

/// A filled prompt plus the structured inputs it was rendered from. Live
/// backends read the prompt, the scripted backend reads the inputs.
struct AgentRequest {
  AgentRole role = AgentRole::Scene;
  std::string prompt;
  nlohmann::json inputs;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string name() const = 0;
  /// Returns the raw completion text. Throws Error(Backend) on timeout,
  /// transport failure or a non-2xx reply.
  virtual std::string complete(const AgentRequest& request) = 0;
};

struct ActionObject {
  int action = 0;
  nlohmann::json object;
};

/// First balanced top-level JSON object in `text` with an integer "action".
/// Throws Error(Parse) with "no object found", "missing action" or
/// "action must be an integer".
ActionObject extract_json(std::string_view text);

// Scripted decision rules. The scripted backend renders exactly these.

/// Emergency on any approach, or high congestion on two or more lanes of one
/// approach.
bool critical_condition(const std::vector<SceneObservation>& scenes);

struct PlanChoice {
  PhaseId phase = 0;
  std::string rationale;
};

/// Phase serving the emergency nearest its stop line; ties go to the longest
/// wait, then the lowest phase id. Without emergencies, the largest queue.
PlanChoice plan_rule(const std::vector<PhaseDescription>& phases);

/// Planning from direction-level facts only: the approach holding the nearest
/// emergency (or the longest queue) gets the lowest phase serving any of its
/// movements, since lane to phase mapping is unavailable.
PlanChoice plan_rule_directional(const std::vector<SceneObservation>& scenes,
                                 const std::map<ApproachId, std::vector<PhaseId>>& approach_phases);

/// Keeps a feasible proposal, otherwise the current phase when feasible,
/// otherwise the first feasible phase.
PhaseId check_rule(std::optional<PhaseId> proposal, const std::vector<PhaseId>& feasible, PhaseId current);

// Structured input encodings shared by the orchestrator and the scripted
// backend.
nlohmann::json phase_to_json(const PhaseDescription& p);
PhaseDescription phase_from_json(const nlohmann::json& j);
SceneObservation observation_from_json(const nlohmann::json& j);

/// Deterministic stand-in for every agent role.
class ScriptedBackend final : public Backend {
 public:
  explicit ScriptedBackend(std::shared_ptr<const Topology> topology);
  std::string name() const override { return "scripted"; }
  std::string complete(const AgentRequest& request) override;

 private:
  std::shared_ptr<const Topology> topology_;
};

/// Routes every tick to deliberation and then answers with prose that holds
/// no usable action. Drives the verification fallback path.
class InvalidBackend final : public Backend {
 public:
  std::string name() const override { return "invalid"; }
  std::string complete(const AgentRequest& request) override;
};

struct BackendConfig {
  std::string kind = "scripted";  // scripted | http | invalid
  std::string endpoint;           // base URL, e.g. http://127.0.0.1:8000
  std::string model;
  std::string api_key;
  double timeout_s = 30.0;
  double temperature = 0.0;
  int max_retries = 2;  // attempts per call on transport failure

  /// LLM_API_BASE, LLM_API_KEY, LLM_MODEL override the defaults.
  static BackendConfig from_env(std::string kind);
  /// Throws Error(Config) when an http backend lacks endpoint or model.
  void validate() const;
};

std::unique_ptr<Backend> make_backend(const BackendConfig& config, std::shared_ptr<const Topology> topology);

}  // namespace vlmlight
