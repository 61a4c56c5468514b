#include "psychdepth/llmio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>
#include <regex>
#include <sstream>
#include <thread>

#include "psychdepth/io.hpp"

namespace psychdepth::llm {

using nlohmann::json;

std::string_view to_string(Purpose p) {
  switch (p) {
    case Purpose::Story: return "story";
    case Purpose::Characters: return "characters";
    case Purpose::Judge: return "judge";
    case Purpose::Themes: return "themes";
    case Purpose::Personas: return "personas";
    case Purpose::Other: return "other";
  }
  return "other";
}

namespace {

Purpose parse_purpose(std::string_view s) {
  for (auto p : {Purpose::Story, Purpose::Characters, Purpose::Judge, Purpose::Themes, Purpose::Personas}) {
    if (s == to_string(p)) return p;
  }
  return Purpose::Other;
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

// ---- ChatRequest -------------------------------------------------------------

json ChatRequest::to_json() const {
  json j = {{"user", user},
            {"temperature", temperature},
            {"max_output_tokens", max_output_tokens},
            {"purpose", llm::to_string(purpose)}};
  j["system"] = system ? json(*system) : json(nullptr);
  j["seed"] = seed ? json(*seed) : json(nullptr);
  j["response_schema"] = response_schema ? *response_schema : json(nullptr);
  return j;
}

ChatRequest ChatRequest::from_json(const json& j) {
  ChatRequest r;
  if (j.contains("system") && !j["system"].is_null()) r.system = j["system"].get<std::string>();
  r.user = j.at("user").get<std::string>();
  r.temperature = j.value("temperature", 0.0);
  r.max_output_tokens = j.value("max_output_tokens", 1024);
  if (j.contains("seed") && !j["seed"].is_null()) r.seed = j["seed"].get<std::uint64_t>();
  r.purpose = parse_purpose(j.value("purpose", "other"));
  if (j.contains("response_schema") && !j["response_schema"].is_null()) r.response_schema = j["response_schema"];
  return r;
}

std::string ChatRequest::key() const { return to_json().dump(); }

// ---- configuration -----------------------------------------------------------

void ProviderConfig::validate() const {
  if (provider_id.empty()) throw Error(ErrorCode::Config, "provider_id is empty");
  if (max_concurrent < 1) {
    throw Error(ErrorCode::Config, "provider " + provider_id + ": max_concurrent must be >= 1",
                {{"provider_id", provider_id}});
  }
  if (retry.max_attempts < 1) {
    throw Error(ErrorCode::Config, "provider " + provider_id + ": max_attempts must be >= 1",
                {{"provider_id", provider_id}});
  }
  if (kind != "openai" && kind != "synthetic") {
    throw Error(ErrorCode::Config, "provider " + provider_id + ": unknown kind '" + kind + "'",
                {{"provider_id", provider_id}});
  }
  if (kind == "openai" && endpoint.empty()) {
    throw Error(ErrorCode::Config, "provider " + provider_id + ": endpoint is required",
                {{"provider_id", provider_id}});
  }
}

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

json parse_value(const std::string& raw, int lineno) {
  auto fail = [&] {
    return Error(ErrorCode::Config, "providers file line " + std::to_string(lineno) + ": bad value '" + raw + "'",
                 {{"line", lineno}});
  };
  if (raw.empty()) throw fail();
  if (raw.front() == '"') {
    // Basic strings use JSON escapes.
    try {
      auto v = json::parse(raw);
      if (!v.is_string()) throw fail();
      return v;
    } catch (const json::exception&) {
      throw fail();
    }
  }
  if (raw == "true") return true;
  if (raw == "false") return false;
  try {
    std::size_t used = 0;
    if (raw.find_first_of(".eE") == std::string::npos) {
      long long v = std::stoll(raw, &used);
      if (used == raw.size()) return v;
    } else {
      double v = std::stod(raw, &used);
      if (used == raw.size()) return v;
    }
  } catch (const std::exception&) {
  }
  throw fail();
}

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

ProviderConfig config_from_table(const std::string& id, const json& table) {
  ProviderConfig c;
  c.provider_id = id;
  for (const auto& [key, value] : table.items()) {
    if (key == "kind") c.kind = value.get<std::string>();
    else if (key == "endpoint") c.endpoint = value.get<std::string>();
    else if (key == "credential" || key == "credential_env") c.credential_env = value.get<std::string>();
    else if (key == "model_id") c.model_id = value.get<std::string>();
    else if (key == "supports_schema_constraint") c.supports_schema_constraint = value.get<bool>();
    else if (key == "max_concurrent") c.max_concurrent = value.get<int>();
    else if (key == "max_attempts") c.retry.max_attempts = value.get<int>();
    else if (key == "backoff_ms") c.retry.backoff_base = std::chrono::milliseconds(value.get<long long>());
    else if (key == "timeout_seconds") c.timeout_seconds = value.get<double>();
    else c.options[key] = value;
  }
  c.validate();
  return c;
}

}  // namespace

std::map<std::string, ProviderConfig> parse_providers(std::string_view text) {
  std::map<std::string, json> tables;
  std::string current;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto stripped = trim(strip_comment(line));
    if (stripped.empty()) continue;
    if (stripped.front() == '[') {
      if (stripped.back() != ']') {
        throw Error(ErrorCode::Config, "providers file line " + std::to_string(lineno) + ": bad section header",
                    {{"line", lineno}});
      }
      current = trim(std::string_view(stripped).substr(1, stripped.size() - 2));
      if (current.size() >= 2 && current.front() == '"' && current.back() == '"') {
        current = current.substr(1, current.size() - 2);
      }
      if (tables.contains(current)) {
        throw Error(ErrorCode::Config, "duplicate provider section '" + current + "'", {{"line", lineno}});
      }
      tables[current] = json::object();
      continue;
    }
    auto eq = stripped.find('=');
    if (eq == std::string::npos || current.empty()) {
      throw Error(ErrorCode::Config, "providers file line " + std::to_string(lineno) + ": expected key = value",
                  {{"line", lineno}});
    }
    tables[current][trim(std::string_view(stripped).substr(0, eq))] =
        parse_value(trim(std::string_view(stripped).substr(eq + 1)), lineno);
  }
  std::map<std::string, ProviderConfig> out;
  for (const auto& [id, table] : tables) {
    try {
      out.emplace(id, config_from_table(id, table));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Config, "provider " + id + ": " + e.what(), {{"provider_id", id}});
    }
  }
  return out;
}

std::map<std::string, ProviderConfig> load_providers(const std::filesystem::path& path) {
  return parse_providers(io::read_file(path));
}

// ---- gate & log ----------------------------------------------------------------

ConcurrencyGate::ConcurrencyGate(int max_in_flight) : max_(std::max(1, max_in_flight)) {}

void ConcurrencyGate::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return in_flight_ < max_; });
  ++in_flight_;
  peak_ = std::max(peak_, in_flight_);
}

void ConcurrencyGate::release() {
  {
    std::lock_guard lock(mu_);
    --in_flight_;
  }
  cv_.notify_one();
}

int ConcurrencyGate::peak() const {
  std::lock_guard lock(mu_);
  return peak_;
}

ReplayLog::ReplayLog(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::app);
  if (!out_) throw Error(ErrorCode::Io, "cannot open replay log " + path.string());
}

void ReplayLog::record(const ProviderConfig& config, const ChatRequest& request, const std::string& response) {
  json j = {{"provider_id", config.provider_id},
            {"model_id", config.model_id},
            {"request", request.to_json()},
            {"response", response}};
  std::lock_guard lock(mu_);
  out_ << j.dump() << '\n';
  out_.flush();
}

void ReplayLog::record_failure(const ProviderConfig& config, const ChatRequest& request, const Error& error) {
  json j = {{"provider_id", config.provider_id},
            {"model_id", config.model_id},
            {"request", request.to_json()},
            {"error", {{"code", to_string(error.code())}, {"message", error.what()}}}};
  std::lock_guard lock(mu_);
  out_ << j.dump() << '\n';
  out_.flush();
}

// ---- judgment records ----------------------------------------------------------

json judgment_schema(bool require_explanations) {
  json props = json::object();
  json required = json::array();
  for (auto c : kAllComponents) {
    props[std::string(record_key(c))] = {{"type", "integer"}, {"minimum", 1}, {"maximum", 5}};
    required.push_back(record_key(c));
  }
  props["humanness"] = {{"type", "integer"}, {"minimum", 1}, {"maximum", 5}};
  required.push_back("humanness");
  if (require_explanations) {
    for (auto c : kAllComponents) {
      auto key = std::string(record_key(c)) + "_why";
      props[key] = {{"type", "string"}, {"minLength", 1}};
      required.push_back(key);
    }
    props["humanness_why"] = {{"type", "string"}, {"minLength", 1}};
    required.push_back("humanness_why");
  }
  return {{"type", "object"}, {"properties", props}, {"required", required}, {"additionalProperties", false}};
}

namespace {

int judgment_int(const json& j, const std::string& key) {
  auto it = j.find(key);
  if (it == j.end()) throw Error(ErrorCode::Parse, "judgment lacks '" + key + "'", {{"field", key}});
  if (!it->is_number_integer()) {
    throw Error(ErrorCode::Parse, "judgment field '" + key + "' is not an integer", {{"field", key}});
  }
  int v = it->get<int>();
  if (v < kLikertMin || v > kLikertMax) {
    throw Error(ErrorCode::Range, "judgment field '" + key + "' out of [1,5]: " + std::to_string(v),
                {{"field", key}, {"value", v}});
  }
  return v;
}

std::string judgment_why(const json& j, const std::string& key, bool required) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    if (required) throw Error(ErrorCode::Parse, "judgment lacks explanation '" + key + "'", {{"field", key}});
    return {};
  }
  if (!it->is_string()) throw Error(ErrorCode::Parse, "judgment field '" + key + "' is not a string", {{"field", key}});
  auto s = it->get<std::string>();
  if (required && s.empty()) throw Error(ErrorCode::Parse, "judgment explanation '" + key + "' is empty", {{"field", key}});
  return s;
}

JudgmentRecord judgment_from_json(const json& j, bool require_explanations) {
  if (!j.is_object()) throw Error(ErrorCode::Parse, "judgment is not an object");
  JudgmentRecord r;
  for (auto c : kAllComponents) {
    auto key = std::string(record_key(c));
    r.ratings[static_cast<std::size_t>(c)] = judgment_int(j, key);
    r.explanations[static_cast<std::size_t>(c)] = judgment_why(j, key + "_why", require_explanations);
  }
  r.humanness = judgment_int(j, "humanness");
  r.humanness_explanation = judgment_why(j, "humanness_why", require_explanations);
  return r;
}

// End index (inclusive) of the balanced object starting at `start`, honoring
// JSON string literals.
std::optional<std::size_t> balanced_end(std::string_view text, std::size_t start) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    char c = text[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return i;
  }
  return std::nullopt;
}

}  // namespace

JudgmentRecord parse_judgment(std::string_view text, bool require_explanations) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Parse, std::string("judgment is not valid JSON: ") + e.what());
  }
  return judgment_from_json(j, require_explanations);
}

std::optional<JudgmentRecord> extract_judgment(std::string_view text, bool require_explanations) {
  for (std::size_t start = text.find('{'); start != std::string_view::npos; start = text.find('{', start + 1)) {
    auto end = balanced_end(text, start);
    if (!end) continue;
    try {
      return parse_judgment(text.substr(start, *end - start + 1), require_explanations);
    } catch (const Error&) {
    }
  }
  return std::nullopt;
}

json to_json(const JudgmentRecord& r) {
  json j = json::object();
  for (auto c : kAllComponents) {
    j[std::string(record_key(c))] = r.rating(c);
    j[std::string(record_key(c)) + "_why"] = r.explanations[static_cast<std::size_t>(c)];
  }
  j["humanness"] = r.humanness;
  j["humanness_why"] = r.humanness_explanation;
  return j;
}

// ---- client ------------------------------------------------------------------

Client::Client(ProviderConfig config, std::shared_ptr<Provider> provider, std::shared_ptr<ConcurrencyGate> gate,
               std::shared_ptr<ReplayLog> log)
    : config_(std::move(config)),
      provider_(std::move(provider)),
      gate_(gate ? std::move(gate) : std::make_shared<ConcurrencyGate>(config_.max_concurrent)),
      log_(std::move(log)) {}

Completion Client::complete(const ChatRequest& request) const {
  if (request.user.empty()) throw Error(ErrorCode::Precondition, "chat request has an empty user message");
  const int max_attempts = std::max(1, config_.retry.max_attempts);
  for (int attempt = 1;; ++attempt) {
    try {
      gate_->acquire();
      std::string text;
      try {
        text = provider_->send(request);
      } catch (...) {
        gate_->release();
        throw;
      }
      gate_->release();
      if (log_) log_->record(config_, request, text);
      return {std::move(text), attempt};
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Transport || e.code() == ErrorCode::Credential) {
        if (log_) log_->record_failure(config_, request, e);
      }
      if (e.code() != ErrorCode::Transport) throw;
      if (attempt >= max_attempts) {
        throw Error(ErrorCode::Transport,
                    "provider " + config_.provider_id + " failed after " + std::to_string(attempt) +
                        " attempts: " + e.what(),
                    {{"provider_id", config_.provider_id}, {"attempts", attempt}});
      }
      auto delay = config_.retry.backoff_base * (1LL << std::min(attempt - 1, 16));
      if (delay.count() > 0) std::this_thread::sleep_for(delay);
    }
  }
}

JudgmentRecord Client::complete_structured(ChatRequest request, bool require_explanations) const {
  if (config_.supports_schema_constraint) {
    request.response_schema = judgment_schema(require_explanations);
    return complete_parsed<JudgmentRecord>(
        request, [&](const std::string& text) { return parse_judgment(text, require_explanations); });
  }
  return complete_parsed<JudgmentRecord>(request, [&](const std::string& text) {
    if (auto r = extract_judgment(text, require_explanations)) return *r;
    // Surface the range problem when the only candidate block is out of range.
    auto start = text.find('{');
    if (start != std::string::npos) {
      if (auto end = balanced_end(text, start)) {
        parse_judgment(std::string_view(text).substr(start, *end - start + 1), require_explanations);
      }
    }
    throw Error(ErrorCode::Parse, "no valid judgment record in model output");
  });
}

// ---- scripted provider ---------------------------------------------------------

ScriptedProvider::ScriptedProvider(std::vector<ScriptStep> script) : script_(script.begin(), script.end()) {}

std::shared_ptr<ScriptedProvider> ScriptedProvider::from_replay_log(const std::filesystem::path& path,
                                                                    const std::string& model_id) {
  std::shared_ptr<ScriptedProvider> p(new ScriptedProvider());
  p->keyed_ = true;
  for (const auto& rec : io::read_jsonl(path)) {
    if (!model_id.empty() && rec.value("model_id", "") != model_id) continue;
    auto key = ChatRequest::from_json(rec.at("request")).key();
    if (rec.contains("response")) {
      p->keyed_script_[key].push_back(ScriptStep::reply(rec["response"].get<std::string>()));
    } else {
      auto code = rec["error"].value("code", "transport");
      p->keyed_script_[key].push_back(code == "credential" ? ScriptStep::auth_fail() : ScriptStep::fail());
    }
  }
  return p;
}

std::string ScriptedProvider::send(const ChatRequest& request) {
  std::lock_guard lock(mu_);
  requests_.push_back(request);
  std::deque<ScriptStep>* queue = &script_;
  if (keyed_) {
    auto it = keyed_script_.find(request.key());
    if (it == keyed_script_.end()) {
      throw Error(ErrorCode::ScriptExhausted, "replay log has no response for this request",
                  {{"request", request.to_json()}});
    }
    queue = &it->second;
  }
  if (queue->empty()) {
    throw Error(ErrorCode::ScriptExhausted,
                "scripted provider exhausted after " + std::to_string(requests_.size() - 1) + " calls");
  }
  auto step = std::move(queue->front());
  queue->pop_front();
  switch (step.kind) {
    case ScriptStep::Kind::Reply: return step.text;
    case ScriptStep::Kind::TransportFailure: throw Error(ErrorCode::Transport, step.text);
    case ScriptStep::Kind::CredentialFailure: throw Error(ErrorCode::Credential, step.text);
  }
  return {};
}

std::vector<ChatRequest> ScriptedProvider::requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

std::size_t ScriptedProvider::calls() const {
  std::lock_guard lock(mu_);
  return requests_.size();
}

std::size_t ScriptedProvider::remaining() const {
  std::lock_guard lock(mu_);
  if (!keyed_) return script_.size();
  std::size_t n = 0;
  for (const auto& [k, q] : keyed_script_) n += q.size();
  return n;
}

// ---- synthetic provider --------------------------------------------------------

namespace {

constexpr std::array<std::string_view, 48> kWords = {
    "the",     "light",   "she",    "remembered", "quiet",  "river",   "door",    "hands",
    "morning", "letter",  "he",     "never",      "said",   "again",   "wind",    "house",
    "years",   "small",   "voice",  "waiting",    "cold",   "through", "window",  "old",
    "dog",     "night",   "held",   "breath",     "slowly", "smiled",  "away",    "names",
    "city",    "under",   "stars",  "because",    "alone",  "warm",    "broken",  "promise",
    "road",    "sister",  "winter", "forgot",     "heart",  "home",    "strange", "still"};

constexpr std::array<std::string_view, 8> kNames = {"Mara", "Elias", "Juno", "Tobias",
                                                    "Wren", "Ines",  "Caleb", "Odette"};

std::string prose(std::mt19937_64& rng, int words) {
  std::string out;
  std::uniform_int_distribution<std::size_t> pick(0, kWords.size() - 1);
  std::uniform_int_distribution<int> sentence(6, 16);
  int until_period = sentence(rng);
  for (int i = 0; i < words; ++i) {
    if (i > 0) out += (i % 70 == 0) ? "\n\n" : " ";
    out += kWords[pick(rng)];
    if (--until_period == 0 || i + 1 == words) {
      out += '.';
      until_period = sentence(rng);
    }
  }
  return out;
}

int clamp_likert(int v) { return std::clamp(v, kLikertMin, kLikertMax); }

}  // namespace

SyntheticProvider::SyntheticProvider(const ProviderConfig& config)
    : seed_(config.options.value("seed", 0ULL)),
      model_id_(config.model_id),
      in_window_rate_(config.options.value("in_window_rate", 0.8)),
      preamble_rate_(config.options.value("preamble_rate", 0.1)),
      prose_wrap_rate_(config.options.value("prose_wrap_rate", 0.3)),
      min_words_(config.options.value("min_words", 400)),
      max_words_(config.options.value("max_words", 600)) {}

std::string SyntheticProvider::send(const ChatRequest& request) {
  const auto key = request.key();
  int occurrence = 0;
  {
    std::lock_guard lock(mu_);
    occurrence = seen_[key]++;
  }
  std::uint64_t h = fnv1a(key, fnv1a(model_id_, seed_ * 0x9E3779B97F4A7C15ULL + 1));
  h = fnv1a(std::to_string(occurrence), h);
  std::mt19937_64 rng(h);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  switch (request.purpose) {
    case Purpose::Story: {
      int words = 0;
      if (unit(rng) < in_window_rate_) {
        words = std::uniform_int_distribution<int>(min_words_, max_words_)(rng);
      } else if (unit(rng) < 0.5) {
        words = std::uniform_int_distribution<int>(std::max(1, min_words_ / 4), min_words_ - 1)(rng);
      } else {
        words = std::uniform_int_distribution<int>(max_words_ + 1, max_words_ + max_words_ / 2)(rng);
      }
      std::string text = prose(rng, words);
      if (unit(rng) < preamble_rate_) text = "Sure! Here's the story you asked for:\n\n" + text;
      return text;
    }
    case Purpose::Characters: {
      std::string out;
      int count = std::uniform_int_distribution<int>(2, 3)(rng);
      for (int i = 0; i < count; ++i) {
        out += std::to_string(i + 1) + ") " + std::string(kNames[(h >> (i * 3)) % kNames.size()]) + ":\n\n";
        out += prose(rng, 40) + "\n\n";
      }
      return out;
    }
    case Purpose::Judge: {
      // A per-story quality level shared by every persona, plus persona noise.
      auto story_hash = fnv1a(request.user, seed_);
      int base = 1 + static_cast<int>(story_hash % 5);
      std::uniform_int_distribution<int> noise(-1, 1);
      json j = json::object();
      for (auto c : kAllComponents) {
        j[std::string(record_key(c))] = clamp_likert(base + noise(rng));
        j[std::string(record_key(c)) + "_why"] = "The story " + prose(rng, 8);
      }
      j["humanness"] = clamp_likert(base + noise(rng));
      j["humanness_why"] = "It reads " + prose(rng, 8);
      if (!request.response_schema && unit(rng) < prose_wrap_rate_) {
        return "Here is my assessment of the story.\n```json\n" + j.dump(2) + "\n```\nLet me know if you need more.";
      }
      return j.dump();
    }
    case Purpose::Themes: {
      // Candidate labels are the "- label: definition" lines of the prompt.
      std::vector<std::string> labels;
      std::istringstream in(request.user);
      std::string line;
      while (std::getline(in, line)) {
        if (line.rfind("- ", 0) == 0) {
          auto colon = line.find(':');
          if (colon != std::string::npos) labels.push_back(line.substr(2, colon - 2));
        }
      }
      std::string out;
      int count = labels.empty() ? 0 : std::uniform_int_distribution<int>(0, 3)(rng);
      std::shuffle(labels.begin(), labels.end(), rng);
      for (int i = 0; i < count; ++i) out += (i ? "," : "") + labels[static_cast<std::size_t>(i)];
      return out;
    }
    case Purpose::Personas: {
      int n = static_cast<int>(kNumComponents);
      std::smatch m;
      static const std::regex kCount(R"(exactly (\d+))");
      if (std::regex_search(request.user, m, kCount)) n = std::stoi(m[1]);
      std::string out;
      for (int i = 0; i < n; ++i) {
        auto c = kAllComponents[static_cast<std::size_t>(i) % kNumComponents];
        out += std::string(to_string(c)) + ": You are a helpful AI who reads stories for " +
               std::string(record_key(c)) + " with attention to " + prose(rng, 6) + "\n";
      }
      return out;
    }
    case Purpose::Other:
      break;
  }
  return "OK";
}

// ---- registry ------------------------------------------------------------------

std::shared_ptr<Provider> make_provider(const ProviderConfig& config) {
  config.validate();
  if (config.kind == "synthetic") return std::make_shared<SyntheticProvider>(config);
  return std::make_shared<HttpChatProvider>(config);
}

ProviderRegistry::ProviderRegistry(std::map<std::string, ProviderConfig> configs) : configs_(std::move(configs)) {}

Client ProviderRegistry::client(const std::string& provider_id, const std::string& model_id) {
  std::lock_guard lock(mu_);
  auto it = configs_.find(provider_id);
  if (it == configs_.end()) {
    throw Error(ErrorCode::Config, "unknown provider '" + provider_id + "'", {{"provider_id", provider_id}});
  }
  auto config = it->second;
  if (!model_id.empty()) config.model_id = model_id;
  auto& gate = gates_[provider_id];
  if (!gate) gate = std::make_shared<ConcurrencyGate>(config.max_concurrent);

  auto cache_key = provider_id + "\x1f" + config.model_id;
  auto& cached = providers_[cache_key];
  if (!cached) {
    cached = replay_source_ ? ScriptedProvider::from_replay_log(*replay_source_, config.model_id)
                            : make_provider(config);
  }
  return Client(config, cached, gate, replay_source_ ? nullptr : log_);
}

}  // namespace psychdepth::llm
