#include <cstdlib>
#include <regex>

#include <httplib.h>

#include "psychdepth/llmio.hpp"

namespace psychdepth::llm {

using nlohmann::json;

HttpChatProvider::HttpChatProvider(ProviderConfig config) : config_(std::move(config)) { config_.validate(); }

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, kUrl)) throw Error(ErrorCode::Config, "bad endpoint URL: " + url);
  std::string path = m[2].matched ? m[2].str() : "/";
  // A base URL gets the standard chat-completions route appended.
  if (path.find("/chat/completions") == std::string::npos) {
    if (path.back() != '/') path += '/';
    path += "chat/completions";
  }
  return {m[1].str(), path};
}

}  // namespace

std::string HttpChatProvider::send(const ChatRequest& request) {
  std::string token;
  if (!config_.credential_env.empty()) {
    const char* v = std::getenv(config_.credential_env.c_str());
    if (!v || !*v) {
      throw Error(ErrorCode::Credential, "credential variable " + config_.credential_env + " is not set",
                  {{"provider_id", config_.provider_id}});
    }
    token = v;
  }

  json messages = json::array();
  if (request.system) messages.push_back({{"role", "system"}, {"content", *request.system}});
  messages.push_back({{"role", "user"}, {"content", request.user}});
  json body = {{"model", config_.model_id},
               {"messages", messages},
               {"temperature", request.temperature},
               {"max_tokens", request.max_output_tokens}};
  if (request.seed) body["seed"] = *request.seed;
  if (request.response_schema) {
    body["response_format"] = {
        {"type", "json_schema"},
        {"json_schema", {{"name", "judgment"}, {"strict", true}, {"schema", *request.response_schema}}}};
  }

  auto ep = split_endpoint(config_.endpoint);
  httplib::Client cli(ep.origin);
  auto secs = static_cast<time_t>(config_.timeout_seconds);
  cli.set_connection_timeout(secs, 0);
  cli.set_read_timeout(secs, 0);
  cli.set_write_timeout(secs, 0);
  httplib::Headers headers;
  if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);

  auto res = cli.Post(ep.path, headers, body.dump(), "application/json");
  if (!res) {
    throw Error(ErrorCode::Transport, "request to " + config_.provider_id + " failed: " + httplib::to_string(res.error()),
                {{"provider_id", config_.provider_id}});
  }
  if (res->status == 401 || res->status == 403) {
    throw Error(ErrorCode::Credential, "provider " + config_.provider_id + " rejected credentials",
                {{"provider_id", config_.provider_id}, {"status", res->status}});
  }
  if (res->status != 200) {
    throw Error(ErrorCode::Transport,
                "provider " + config_.provider_id + " returned HTTP " + std::to_string(res->status),
                {{"provider_id", config_.provider_id}, {"status", res->status}});
  }
  try {
    auto j = json::parse(res->body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Transport, "malformed response from " + config_.provider_id + ": " + e.what(),
                {{"provider_id", config_.provider_id}});
  }
}

}  // namespace psychdepth::llm
