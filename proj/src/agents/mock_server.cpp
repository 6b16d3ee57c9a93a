#include "agents/mock_server.hpp"

#include <chrono>

#include <httplib.h>

#include "error.hpp"

namespace vlmlight {

using nlohmann::json;

struct MockChatServer::Impl {
  Handler handler;
  httplib::Server server;
  std::thread thread;
  mutable std::mutex mu;
  std::vector<json> requests;
  int port = 0;
};

MockChatServer::MockChatServer(Handler handler) : impl_(std::make_unique<Impl>()) {
  impl_->handler = std::move(handler);
  auto* impl = impl_.get();
  auto serve_chat = [impl](const httplib::Request& req, httplib::Response& res) {
    json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded()) {
      res.status = 400;
      res.set_content(R"({"error":"malformed JSON"})", "application/json");
      return;
    }
    {
      std::lock_guard<std::mutex> lock(impl->mu);
      impl->requests.push_back(body);
    }
    const MockReply reply = impl->handler(body);
    if (reply.delay_s > 0.0) std::this_thread::sleep_for(std::chrono::duration<double>(reply.delay_s));
    res.status = reply.status;
    json out = {{"id", "mock"},
                {"object", "chat.completion"},
                {"model", body.value("model", "")},
                {"choices", json::array({{{"index", 0},
                                          {"message", {{"role", "assistant"}, {"content", reply.content}}},
                                          {"finish_reason", "stop"}}})}};
    res.set_content(out.dump(), "application/json");
  };
  impl_->server.Post("/v1/chat/completions", serve_chat);
}

MockChatServer::~MockChatServer() { stop(); }

int MockChatServer::start(int port) {
  impl_->port = port == 0 ? impl_->server.bind_to_any_port("127.0.0.1") : port;
  if (port != 0 && !impl_->server.bind_to_port("127.0.0.1", port))
    fail(ErrorKind::Io, "mock server cannot bind port " + std::to_string(port));
  if (impl_->port < 0) fail(ErrorKind::Io, "mock server cannot bind a port");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void MockChatServer::serve(int port) {
  impl_->port = port;
  if (!impl_->server.listen("127.0.0.1", port)) fail(ErrorKind::Io, "mock server cannot listen on port " + std::to_string(port));
}

void MockChatServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string MockChatServer::base_url() const { return "http://127.0.0.1:" + std::to_string(impl_->port); }

std::vector<json> MockChatServer::requests() const {
  std::lock_guard<std::mutex> lock(impl_->mu);
  return impl_->requests;
}

std::string mock_request_role(const json& request) {
  if (!request.contains("messages") || !request["messages"].is_array()) return {};
  for (const auto& m : request["messages"]) {
    if (m.value("role", "") != "system") continue;
    const std::string content = m.value("content", "");
    const auto pos = content.find("Agent_");
    if (pos == std::string::npos) return {};
    auto end = content.find(' ', pos);
    return content.substr(pos + 6, end == std::string::npos ? std::string::npos : end - pos - 6);
  }
  return {};
}

MockChatServer::Handler mock_fixed_handler(int phase) {
  return [phase](const json& request) {
    const std::string role = mock_request_role(request);
    MockReply r;
    if (role == "mode_selector") r.content = "DELIBERATIVE";
    else if (role == "plan" || role == "check")
      r.content = "Choice follows. {\"action\": " + std::to_string(phase) + ", \"rationale\": \"fixed mock policy\"}";
    else r.content = "Mock description.";
    return r;
  };
}

}  // namespace vlmlight
