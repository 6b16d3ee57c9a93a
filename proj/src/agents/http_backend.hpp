#pragma once

#include <string>
#include <utility>

#include "agents/backend.hpp"

namespace vlmlight {

/// OpenAI-compatible chat completions client. One round trip per call, with
/// up to `max_retries` attempts on transport failure or a 5xx/429 reply.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(BackendConfig config);
  std::string name() const override { return "http"; }
  std::string complete(const AgentRequest& request) override;

  /// Request body for a prompt: model, system + user messages, temperature.
  nlohmann::json request_body(const AgentRequest& request) const;

 private:
  BackendConfig config_;
  std::string scheme_host_port_;
  std::string path_;
};

/// Splits a base URL into (scheme://host[:port], chat completions path).
/// A base ending in /v1 gets /chat/completions appended, anything else
/// /v1/chat/completions.
std::pair<std::string, std::string> split_endpoint(const std::string& base);

}  // namespace vlmlight
