#pragma once

#include <array>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psychdepth/corpus.hpp"
#include "psychdepth/error.hpp"

namespace psychdepth::llm {

inline constexpr double kGenerationTemperature = 1.0;
inline constexpr double kJudgingTemperature = 0.0;

// What a request is for. Carried in logs and used by the synthetic provider;
// never sent to a remote API.
enum class Purpose { Story, Characters, Judge, Themes, Personas, Other };
std::string_view to_string(Purpose p);

struct ChatRequest {
  std::optional<std::string> system;
  std::string user;
  double temperature = 0.0;
  int max_output_tokens = 1024;
  std::optional<std::uint64_t> seed;
  Purpose purpose = Purpose::Other;
  // When set, the provider must decode under this JSON schema.
  std::optional<nlohmann::json> response_schema;

  nlohmann::json to_json() const;
  static ChatRequest from_json(const nlohmann::json& j);
  // Canonical serialization used to key replayed responses.
  std::string key() const;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds backoff_base{500};
};

struct ProviderConfig {
  std::string provider_id;
  std::string kind = "openai";  // openai | synthetic
  std::string endpoint;
  std::string credential_env;
  std::string model_id;
  bool supports_schema_constraint = false;
  int max_concurrent = 1;
  RetryPolicy retry;
  double timeout_seconds = 120.0;
  nlohmann::json options = nlohmann::json::object();  // kind-specific settings

  void validate() const;
};

// Parses the sectioned key/value providers file:
//   [provider_id]
//   kind = "openai"
//   max_concurrent = 4
std::map<std::string, ProviderConfig> parse_providers(std::string_view text);
std::map<std::string, ProviderConfig> load_providers(const std::filesystem::path& path);

// Transport implementations throw Error{Transport} for retryable failures and
// Error{Credential} for authentication problems.
class Provider {
 public:
  virtual ~Provider() = default;
  virtual std::string send(const ChatRequest& request) = 0;
};

// Caps in-flight requests; one gate is shared by every client of a provider id.
class ConcurrencyGate {
 public:
  explicit ConcurrencyGate(int max_in_flight);
  void acquire();
  void release();
  int max_in_flight() const { return max_; }
  int peak() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  int max_;
  int in_flight_ = 0;
  int peak_ = 0;
};

// Append-only line-delimited request/response log.
class ReplayLog {
 public:
  explicit ReplayLog(const std::filesystem::path& path);
  void record(const ProviderConfig& config, const ChatRequest& request, const std::string& response);
  void record_failure(const ProviderConfig& config, const ChatRequest& request, const Error& error);

 private:
  std::mutex mu_;
  std::ofstream out_;
};

struct Completion {
  std::string text;
  int attempts = 0;
};

struct JudgmentRecord {
  ComponentRatings ratings{};
  int humanness = 0;
  std::array<std::string, kNumComponents> explanations;
  std::string humanness_explanation;

  int rating(ComponentId c) const { return ratings[static_cast<std::size_t>(c)]; }
};

// JSON schema admitting exactly the flat judgment record.
nlohmann::json judgment_schema(bool require_explanations);
// Whole-text parse; throws Parse / Range.
JudgmentRecord parse_judgment(std::string_view text, bool require_explanations = false);
// First balanced {...} block that parses and validates; nullopt if none.
std::optional<JudgmentRecord> extract_judgment(std::string_view text, bool require_explanations = false);
nlohmann::json to_json(const JudgmentRecord& r);

class Client {
 public:
  Client(ProviderConfig config, std::shared_ptr<Provider> provider,
         std::shared_ptr<ConcurrencyGate> gate = nullptr, std::shared_ptr<ReplayLog> log = nullptr);

  const ProviderConfig& config() const { return config_; }
  const std::shared_ptr<ConcurrencyGate>& gate() const { return gate_; }

  // Retries transport failures with exponential backoff up to
  // retry.max_attempts. Credential failures are not retried.
  Completion complete(const ChatRequest& request) const;

  // Re-asks up to retry.max_attempts times while `parse` throws Error{Parse}
  // or Error{Range}; the final failure is rethrown as Parse carrying the raw
  // text of every attempt.
  template <typename T>
  T complete_parsed(const ChatRequest& request, const std::function<T(const std::string&)>& parse) const;

  JudgmentRecord complete_structured(ChatRequest request, bool require_explanations = false) const;

 private:
  ProviderConfig config_;
  std::shared_ptr<Provider> provider_;
  std::shared_ptr<ConcurrencyGate> gate_;
  std::shared_ptr<ReplayLog> log_;
};

// ---- offline providers -------------------------------------------------------

struct ScriptStep {
  enum class Kind { Reply, TransportFailure, CredentialFailure };
  Kind kind = Kind::Reply;
  std::string text;

  static ScriptStep reply(std::string text) { return {Kind::Reply, std::move(text)}; }
  static ScriptStep fail() { return {Kind::TransportFailure, "scripted transport failure"}; }
  static ScriptStep auth_fail() { return {Kind::CredentialFailure, "scripted credential failure"}; }
};

// Deterministic provider. In sequential mode it consumes the script in order;
// in keyed mode (built from a replay log) each request key has its own queue.
class ScriptedProvider : public Provider {
 public:
  explicit ScriptedProvider(std::vector<ScriptStep> script);
  static std::shared_ptr<ScriptedProvider> from_replay_log(const std::filesystem::path& path,
                                                           const std::string& model_id = {});

  std::string send(const ChatRequest& request) override;

  std::vector<ChatRequest> requests() const;
  std::size_t calls() const;
  std::size_t remaining() const;

 private:
  ScriptedProvider() = default;

  mutable std::mutex mu_;
  bool keyed_ = false;
  std::deque<ScriptStep> script_;
  std::map<std::string, std::deque<ScriptStep>> keyed_script_;
  std::vector<ChatRequest> requests_;
};

// Offline stand-in for a text model. Output is a pure function of the
// provider seed, model id, request, and how many times that exact request has
// been seen. Options: seed, in_window_rate, preamble_rate, min_words, max_words,
// prose_wrap_rate.
class SyntheticProvider : public Provider {
 public:
  explicit SyntheticProvider(const ProviderConfig& config);
  std::string send(const ChatRequest& request) override;

 private:
  std::uint64_t seed_;
  std::string model_id_;
  double in_window_rate_;
  double preamble_rate_;
  double prose_wrap_rate_;
  int min_words_;
  int max_words_;
  std::mutex mu_;
  std::map<std::string, int> seen_;
};

// OpenAI-compatible chat-completions transport over HTTP(S).
class HttpChatProvider : public Provider {
 public:
  explicit HttpChatProvider(ProviderConfig config);
  std::string send(const ChatRequest& request) override;

 private:
  ProviderConfig config_;
};

std::shared_ptr<Provider> make_provider(const ProviderConfig& config);

// Builds clients sharing one gate per provider id, optionally recording every
// exchange or serving every request from a replay log.
class ProviderRegistry {
 public:
  explicit ProviderRegistry(std::map<std::string, ProviderConfig> configs);

  void set_replay_log(std::shared_ptr<ReplayLog> log) { log_ = std::move(log); }
  void set_replay_source(std::filesystem::path path) { replay_source_ = std::move(path); }

  // model_id overrides the configured model when non-empty.
  Client client(const std::string& provider_id, const std::string& model_id = {});
  const std::map<std::string, ProviderConfig>& configs() const { return configs_; }

 private:
  std::map<std::string, ProviderConfig> configs_;
  std::map<std::string, std::shared_ptr<ConcurrencyGate>> gates_;
  std::map<std::string, std::shared_ptr<Provider>> providers_;  // per provider/model
  std::shared_ptr<ReplayLog> log_;
  std::optional<std::filesystem::path> replay_source_;
  std::mutex mu_;
};

// ---- template definition ---------------------------------------------------

template <typename T>
T Client::complete_parsed(const ChatRequest& request,
                          const std::function<T(const std::string&)>& parse) const {
  nlohmann::json raw = nlohmann::json::array();
  std::string last_reason;
  const int attempts = std::max(1, config_.retry.max_attempts);
  for (int i = 0; i < attempts; ++i) {
    auto completion = complete(request);
    raw.push_back(completion.text);
    try {
      return parse(completion.text);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Parse && e.code() != ErrorCode::Range &&
          e.code() != ErrorCode::UnknownLabel) {
        throw;
      }
      last_reason = e.what();
      if (i + 1 == attempts) {
        auto detail = e.detail();
        detail["raw"] = raw;
        detail["attempts"] = attempts;
        throw Error(e.code() == ErrorCode::UnknownLabel ? ErrorCode::UnknownLabel : ErrorCode::Parse,
                    "unparsable model output after " + std::to_string(attempts) + " attempts: " + last_reason,
                    detail);
      }
    }
  }
  throw Error(ErrorCode::Parse, "unreachable");
}

}  // namespace psychdepth::llm
