#include "agents/http_backend.hpp"

#include <httplib.h>

#include "error.hpp"

namespace vlmlight {

using nlohmann::json;

std::pair<std::string, std::string> split_endpoint(const std::string& base) {
  const auto scheme_end = base.find("://");
  if (scheme_end == std::string::npos) fail(ErrorKind::Config, "endpoint '" + base + "' lacks a scheme");
  const auto path_start = base.find('/', scheme_end + 3);
  std::string host = path_start == std::string::npos ? base : base.substr(0, path_start);
  std::string path = path_start == std::string::npos ? "" : base.substr(path_start);
  while (!path.empty() && path.back() == '/') path.pop_back();
  if (path.size() >= 3 && path.compare(path.size() - 3, 3, "/v1") == 0)
    path += "/chat/completions";
  else if (path.size() < 17 || path.compare(path.size() - 17, 17, "/chat/completions") != 0)
    path += "/v1/chat/completions";
  return {host, path};
}

HttpBackend::HttpBackend(BackendConfig config) : config_(std::move(config)) {
  config_.validate();
  std::tie(scheme_host_port_, path_) = split_endpoint(config_.endpoint);
}

json HttpBackend::request_body(const AgentRequest& request) const {
  const std::string system = "You are Agent_" + std::string(to_string(request.role)) +
                             " in a traffic signal control system. Follow the output format exactly.";
  return {{"model", config_.model},
          {"messages", json::array({{{"role", "system"}, {"content", system}}, {{"role", "user"}, {"content", request.prompt}}})},
          {"temperature", config_.temperature}};
}

std::string HttpBackend::complete(const AgentRequest& request) {
  if (request.prompt.empty()) fail(ErrorKind::InvalidArgument, "http backend: empty prompt");
  httplib::Client client(scheme_host_port_);
  const auto secs = static_cast<time_t>(config_.timeout_s);
  const auto usecs = static_cast<time_t>((config_.timeout_s - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
  const std::string body = request_body(request).dump();

  std::string last_error;
  for (int attempt = 1; attempt <= config_.max_retries; ++attempt) {
    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "server replied " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300)
      fail(ErrorKind::Backend, "http backend: server replied " + std::to_string(res->status));
    json doc = json::parse(res->body, nullptr, false);
    if (doc.is_discarded()) fail(ErrorKind::Backend, "http backend: reply is not JSON");
    try {
      return doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
      fail(ErrorKind::Backend, "http backend: reply lacks choices[0].message.content");
    }
  }
  fail(ErrorKind::Backend, "http backend: " + last_error + " after " + std::to_string(config_.max_retries) +
                               (config_.max_retries == 1 ? " attempt" : " attempts"));
}

}  // namespace vlmlight
