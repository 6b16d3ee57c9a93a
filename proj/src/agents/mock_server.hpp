#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

namespace vlmlight {

struct MockReply {
  int status = 200;
  std::string content;  // becomes choices[0].message.content
  double delay_s = 0.0;  // sleep before replying, to provoke client timeouts
};

/// Local OpenAI-compatible chat endpoint for conformance tests. Records every
/// request body it receives.
class MockChatServer {
 public:
  using Handler = std::function<MockReply(const nlohmann::json& request)>;

  explicit MockChatServer(Handler handler);
  ~MockChatServer();
  MockChatServer(const MockChatServer&) = delete;
  MockChatServer& operator=(const MockChatServer&) = delete;

  /// Binds 127.0.0.1 on `port` (0 = any free port) and serves in a thread.
  int start(int port = 0);
  void stop();
  /// Blocks serving on the calling thread.
  void serve(int port);

  std::string base_url() const;
  std::vector<nlohmann::json> requests() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Agent role named in a request's system message ("plan", "check", ...), or
/// an empty string.
std::string mock_request_role(const nlohmann::json& request);

/// Handler that answers like the scripted rules would for a fixed policy:
/// ModeSelector -> DELIBERATIVE, Plan/Check -> {"action": <phase>}, others ->
/// short prose.
MockChatServer::Handler mock_fixed_handler(int phase);

}  // namespace vlmlight
