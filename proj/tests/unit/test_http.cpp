#include <doctest.h>

#include <atomic>

#include "agents/http_backend.hpp"
#include "agents/mock_server.hpp"
#include "error.hpp"
#include "orchestrator.hpp"

using namespace vlmlight;

namespace {
BackendConfig http_config(const std::string& base) {
  BackendConfig c;
  c.kind = "http";
  c.endpoint = base;
  c.model = "mock-model";
  c.api_key = "secret";
  c.timeout_s = 2.0;
  return c;
}
}  // namespace

TEST_CASE("endpoint splitting follows the OpenAI path convention") {
  CHECK(split_endpoint("http://h:8000") == std::pair<std::string, std::string>{"http://h:8000", "/v1/chat/completions"});
  CHECK(split_endpoint("https://api.x.com/v1/") ==
        std::pair<std::string, std::string>{"https://api.x.com", "/v1/chat/completions"});
  CHECK(split_endpoint("http://h/proxy").second == "/proxy/v1/chat/completions");
  CHECK(split_endpoint("http://h/v1/chat/completions").second == "/v1/chat/completions");
  CHECK_THROWS_AS(split_endpoint("localhost:8000"), Error);
}

TEST_CASE("requests carry model, messages and temperature zero; replies are parsed") {
  MockChatServer server(mock_fixed_handler(2));
  server.start();
  HttpBackend b(http_config(server.base_url()));
  const auto reply = b.complete({AgentRole::Plan, "choose a phase", {}});
  CHECK(extract_json(reply).action == 2);
  const auto reqs = server.requests();
  REQUIRE(reqs.size() == 1);
  CHECK(reqs[0].at("model") == "mock-model");
  CHECK(reqs[0].at("temperature") == 0.0);
  REQUIRE(reqs[0].at("messages").size() == 2);
  CHECK(reqs[0]["messages"][0]["role"] == "system");
  CHECK(reqs[0]["messages"][1]["role"] == "user");
  CHECK(reqs[0]["messages"][1]["content"] == "choose a phase");
  CHECK(mock_request_role(reqs[0]) == "plan");
  server.stop();
}

TEST_CASE("server errors retry, client errors do not") {
  std::atomic<int> calls{0};
  MockChatServer server([&](const nlohmann::json&) {
    MockReply r;
    r.status = ++calls == 1 ? 503 : 200;
    r.content = "{\"action\": 1}";
    return r;
  });
  server.start();
  HttpBackend b(http_config(server.base_url()));
  CHECK(extract_json(b.complete({AgentRole::Check, "p", {}})).action == 1);
  CHECK(calls == 2);
  server.stop();

  MockChatServer denied([](const nlohmann::json&) { return MockReply{401, "", 0.0}; });
  denied.start();
  HttpBackend d(http_config(denied.base_url()));
  CHECK_THROWS_AS(d.complete({AgentRole::Check, "p", {}}), Error);
  CHECK(denied.requests().size() == 1);
  denied.stop();
}

TEST_CASE("a timeout is a backend error after every attempt") {
  MockChatServer slow([](const nlohmann::json&) { return MockReply{200, "{\"action\": 1}", 1.0}; });
  slow.start();
  auto c = http_config(slow.base_url());
  c.timeout_s = 0.2;
  HttpBackend b(c);
  CHECK_THROWS_WITH_AS(b.complete({AgentRole::Plan, "p", {}}), doctest::Contains("after 2 attempts"), Error);
  slow.stop();
}

TEST_CASE("timeouts count as failed attempts and fall back to the fast branch") {
  MockChatServer server([](const nlohmann::json& req) {
    const auto role = mock_request_role(req);
    if (role == "mode_selector") return MockReply{200, "DELIBERATIVE", 0.0};
    if (role == "plan" || role == "check") return MockReply{200, "{\"action\": 1}", 1.0};
    return MockReply{200, "text", 0.0};
  });
  server.start();
  ControllerSpec spec;
  spec.kind = "vlmlight";
  spec.backend = http_config(server.base_url());
  spec.backend.timeout_s = 0.1;
  spec.backend.max_retries = 1;
  EpisodeOptions eo;
  eo.t_max = 10;
  eo.warmup = 0;
  const auto ep = run_episode(builtin_scenario("massy"), spec, 1, eo);
  REQUIRE(ep.traces.size() == 2);
  for (const auto& t : ep.traces) {
    CHECK(t.attempts.size() == 3);
    for (const auto& a : t.attempts) CHECK(a.reason.find("http backend") != std::string::npos);
    CHECK(t.fallback);
    CHECK(t.final_action == t.routine_action);
  }
  server.stop();
}
