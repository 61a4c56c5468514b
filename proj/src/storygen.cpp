#include "psychdepth/storygen.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <set>
#include <thread>

#include "psychdepth/assets.hpp"
#include "psychdepth/io.hpp"

namespace psychdepth::storygen {

using nlohmann::json;

void GenLimits::validate() const {
  if (min_words <= 0 || min_words > max_words) {
    throw Error(ErrorCode::Validation,
                "length window must satisfy 0 < min_words <= max_words (got " + std::to_string(min_words) + ", " +
                    std::to_string(max_words) + ")",
                {{"field", "limits"}});
  }
  if (max_attempts < 1) throw Error(ErrorCode::Validation, "max_attempts must be >= 1", {{"field", "max_attempts"}});
}

// ---- prompts -------------------------------------------------------------------

llm::ChatRequest render_writer_profile_prompt(const Premise& premise) {
  llm::ChatRequest r;
  r.system = prompt_asset("writer_profile.system").body;
  r.user = render_template(prompt_asset("writer_profile.user").body, {{"premise", premise.text}});
  r.temperature = llm::kGenerationTemperature;
  r.max_output_tokens = 1500;
  r.purpose = llm::Purpose::Story;
  return r;
}

llm::ChatRequest render_character_prompt(const Premise& premise) {
  llm::ChatRequest r;
  r.user = render_template(prompt_asset("characters.user").body, {{"premise", premise.text}});
  r.temperature = llm::kGenerationTemperature;
  r.max_output_tokens = 1024;
  r.purpose = llm::Purpose::Characters;
  return r;
}

llm::ChatRequest render_story_prompt(const Premise& premise, const std::string& portraits, const GenLimits& limits) {
  if (portraits.find_first_not_of(" \t\r\n") == std::string::npos) throw Error(ErrorCode::Precondition, "character portraits are empty");
  llm::ChatRequest r;
  r.user = render_template(prompt_asset("story.user").body,
                           {{"premise", premise.text},
                            {"portraits", portraits},
                            {"target_words", std::to_string(limits.target_words())},
                            {"min_words", std::to_string(limits.min_words)},
                            {"max_words", std::to_string(limits.max_words)}});
  r.temperature = llm::kGenerationTemperature;
  r.max_output_tokens = 1500;
  r.purpose = llm::Purpose::Story;
  return r;
}

std::string flatten(const llm::ChatRequest& request) {
  return request.system ? *request.system + "\n\n" + request.user : request.user;
}

// ---- cleanup -------------------------------------------------------------------

CleanupPatterns CleanupPatterns::defaults() {
  constexpr auto flags = std::regex::ECMAScript | std::regex::icase;
  CleanupPatterns p;
  p.preamble = {
      std::regex(R"(^\s*(sure|okay|ok|certainly|of course|absolutely|alright|all right)\s*[!,.:])", flags),
      std::regex(R"(^\s*(here(?:'|’)?s|here is|below is)\b.*\b(story|tale|narrative)\b)", flags),
      std::regex(R"(^\s*(as requested|i hope you enjoy)\b)", flags),
  };
  return p;
}

namespace {

bool is_blank(std::string_view line) { return line.find_first_not_of(" \t\r") == std::string_view::npos; }

std::string_view first_line(std::string_view text) { return text.substr(0, text.find('\n')); }

// Text after the paragraph that starts at offset 0, with following blank
// lines skipped.
std::string_view drop_first_paragraph(std::string_view text) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    auto line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    if (pos > 0 && is_blank(line)) break;
    if (eol == std::string_view::npos) return {};
    pos = eol + 1;
  }
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    auto line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    if (!is_blank(line)) break;
    if (eol == std::string_view::npos) return {};
    pos = eol + 1;
  }
  return text.substr(pos);
}

bool matches_preamble(std::string_view line, const CleanupPatterns& patterns) {
  std::string s(line);
  for (const auto& re : patterns.preamble) {
    if (std::regex_search(s, re)) return true;
  }
  return false;
}

}  // namespace

CleanResult clean_story(std::string_view text, const CleanupPatterns& patterns) {
  CleanResult out;
  bool changed = true;
  while (changed) {
    changed = false;
    if (text.rfind("```", 0) == 0) {
      auto eol = text.find('\n');
      text = eol == std::string_view::npos ? std::string_view() : text.substr(eol + 1);
      changed = true;
    }
    auto end = text.find_last_not_of(" \t\r\n");
    if (end != std::string_view::npos && end >= 2 && text.substr(end - 2, 3) == "```") {
      auto line_start = text.rfind('\n', end);
      line_start = line_start == std::string_view::npos ? 0 : line_start + 1;
      if (text.substr(line_start, end + 1 - line_start).find_first_not_of('`') == std::string_view::npos) {
        text = text.substr(0, line_start);
        while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.remove_suffix(1);
        changed = true;
      }
    }
    if (!text.empty() && matches_preamble(first_line(text), patterns)) {
      text = drop_first_paragraph(text);
      changed = true;
    }
    out.cleaned = out.cleaned || changed;
  }
  out.text = std::string(text);
  return out;
}

// ---- generation loop -------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

Story generate_story(const llm::Client& client, const Premise& premise, StrategyId strategy, const GenLimits& limits,
                     const Authorship& authorship, std::optional<std::uint64_t> seed, GenerationStats* stats,
                     const CleanupPatterns& patterns) {
  limits.validate();
  authorship.validate();
  if (authorship.kind != AuthorKind::Llm) {
    throw Error(ErrorCode::Precondition, "generate_story needs llm authorship");
  }
  GenerationStats local;
  GenerationStats& st = stats ? *stats : local;

  for (int attempt = 0; attempt < limits.max_attempts; ++attempt) {
    std::optional<std::uint64_t> attempt_seed;
    if (seed) attempt_seed = splitmix64(*seed + static_cast<std::uint64_t>(attempt));

    llm::ChatRequest request;
    if (strategy == StrategyId::PW) {
      auto char_request = render_character_prompt(premise);
      char_request.seed = attempt_seed;
      auto portraits = client.complete(char_request).text;
      ++st.character_completions;
      if (is_blank(portraits)) continue;  // nothing to plan from; counts as a spent attempt
      request = render_story_prompt(premise, portraits, limits);
    } else {
      request = render_writer_profile_prompt(premise);
    }
    request.seed = attempt_seed;

    auto raw = client.complete(request).text;
    ++st.story_completions;
    auto cleaned = clean_story(raw, patterns);
    int words = word_count(cleaned.text);
    if (words >= limits.min_words && words <= limits.max_words) {
      Story s;
      s.premise_id = premise.id;
      s.authorship = authorship;
      s.text = std::move(cleaned.text);
      s.word_count = words;
      s.retries = st.story_completions - 1;
      s.cleaned = cleaned.cleaned;
      return s;
    }
    st.rejected_word_counts.push_back(words);
  }

  json detail = {{"attempts", limits.max_attempts},
                 {"story_completions", st.story_completions},
                 {"character_completions", st.character_completions},
                 {"rejected_word_counts", st.rejected_word_counts},
                 {"min_words", limits.min_words},
                 {"max_words", limits.max_words},
                 {"premise_id", premise.id}};
  if (authorship.model_id) detail["model_id"] = *authorship.model_id;
  throw Error(ErrorCode::GenerationExhausted,
              "no story within " + std::to_string(limits.min_words) + "-" + std::to_string(limits.max_words) +
                  " words after " + std::to_string(limits.max_attempts) + " attempts",
              detail);
}

// ---- manifests -------------------------------------------------------------------

void GenerationManifest::validate() const {
  if (models.empty()) throw Error(ErrorCode::Validation, "generation manifest lists no models", {{"field", "models"}});
  std::set<std::string> seen;
  for (const auto& m : models) {
    if (m.model_id.empty() || m.provider_id.empty()) {
      throw Error(ErrorCode::Validation, "every model needs model_id and provider", {{"field", "models"}});
    }
    if (!seen.insert(m.model_id).second) {
      throw Error(ErrorCode::DuplicateId, "model listed twice: " + m.model_id, {{"field", "models"}});
    }
  }
  if (strategies.empty()) throw Error(ErrorCode::Validation, "no strategies", {{"field", "strategies"}});
  if (samples < 1) throw Error(ErrorCode::Validation, "samples must be >= 1", {{"field", "samples"}});
  limits.validate();
}

GenerationManifest manifest_from_json(const json& j) {
  GenerationManifest m;
  try {
    for (const auto& mj : j.at("models")) {
      m.models.push_back({mj.at("model_id").get<std::string>(), mj.at("provider").get<std::string>()});
    }
    if (j.contains("strategies")) {
      m.strategies.clear();
      for (const auto& s : j["strategies"]) {
        auto parsed = parse_strategy(s.get<std::string>());
        if (!parsed) throw Error(ErrorCode::Validation, "unknown strategy " + s.dump(), {{"field", "strategies"}});
        m.strategies.push_back(*parsed);
      }
    }
    m.samples = j.value("samples", m.samples);
    if (j.contains("premise_ids")) m.premise_ids = j["premise_ids"].get<std::vector<int>>();
    m.seed = j.value("seed", m.seed);
    if (j.contains("limits")) {
      const auto& l = j["limits"];
      m.limits.min_words = l.value("min_words", m.limits.min_words);
      m.limits.max_words = l.value("max_words", m.limits.max_words);
      m.limits.max_attempts = l.value("max_attempts", m.limits.max_attempts);
    }
    m.first_story_id = j.value("first_story_id", m.first_story_id);
    m.workers = j.value("workers", m.workers);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("bad generation manifest: ") + e.what());
  }
  m.validate();
  return m;
}

json to_json(const GenerationManifest& m) {
  json models = json::array();
  for (const auto& s : m.models) models.push_back({{"model_id", s.model_id}, {"provider", s.provider_id}});
  json strategies = json::array();
  for (auto s : m.strategies) strategies.push_back(to_string(s));
  return {{"models", models},
          {"strategies", strategies},
          {"samples", m.samples},
          {"premise_ids", m.premise_ids},
          {"seed", m.seed},
          {"limits",
           {{"min_words", m.limits.min_words},
            {"max_words", m.limits.max_words},
            {"max_attempts", m.limits.max_attempts}}},
          {"first_story_id", m.first_story_id},
          {"workers", m.workers}};
}

std::uint64_t cell_seed(std::uint64_t manifest_seed, const std::string& model_id, StrategyId strategy,
                        int premise_id, int sample_index) {
  std::uint64_t h = splitmix64(manifest_seed);
  for (unsigned char c : model_id) h = splitmix64(h ^ c);
  h = splitmix64(h ^ static_cast<std::uint64_t>(strategy == StrategyId::WP ? 1 : 2));
  h = splitmix64(h ^ static_cast<std::uint64_t>(premise_id));
  h = splitmix64(h ^ static_cast<std::uint64_t>(sample_index));
  return h;
}

// ---- grid ----------------------------------------------------------------------

GenerationRun run_generation(llm::ProviderRegistry& registry, const std::vector<Premise>& premises,
                             const GenerationManifest& manifest) {
  manifest.validate();
  std::vector<const Premise*> chosen;
  if (manifest.premise_ids.empty()) {
    for (const auto& p : premises) chosen.push_back(&p);
  } else {
    for (int id : manifest.premise_ids) {
      auto it = std::find_if(premises.begin(), premises.end(), [&](const Premise& p) { return p.id == id; });
      if (it == premises.end()) {
        throw Error(ErrorCode::Join, "manifest names unknown premise " + std::to_string(id), {{"premise_id", id}});
      }
      chosen.push_back(&*it);
    }
  }
  if (chosen.empty()) throw Error(ErrorCode::Coverage, "no premises to generate for");

  struct Cell {
    std::size_t model;
    StrategyId strategy;
    const Premise* premise;
    int sample;
  };
  std::vector<Cell> cells;
  for (std::size_t mi = 0; mi < manifest.models.size(); ++mi) {
    for (auto strategy : manifest.strategies) {
      for (const auto* p : chosen) {
        for (int s = 0; s < manifest.samples; ++s) cells.push_back({mi, strategy, p, s});
      }
    }
  }

  std::vector<llm::Client> clients;
  std::map<std::string, int> provider_limits;
  for (const auto& m : manifest.models) {
    clients.push_back(registry.client(m.provider_id, m.model_id));
    provider_limits[m.provider_id] = clients.back().config().max_concurrent;
  }
  int workers = manifest.workers;
  if (workers <= 0) {
    workers = 0;
    for (const auto& [id, n] : provider_limits) workers += n;
  }
  workers = std::clamp(workers, 1, static_cast<int>(cells.size()));

  std::vector<std::optional<Story>> results(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};

  auto work = [&] {
    while (!failed.load()) {
      auto i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const auto& c = cells[i];
      const auto& model = manifest.models[c.model];
      try {
        auto story = generate_story(clients[c.model], *c.premise, c.strategy, manifest.limits,
                                    Authorship::llm(model.model_id, c.strategy, c.sample),
                                    cell_seed(manifest.seed, model.model_id, c.strategy, c.premise->id, c.sample));
        story.id = manifest.first_story_id + static_cast<std::int64_t>(i);
        results[i] = std::move(story);
      } catch (...) {
        errors[i] = std::current_exception();
        failed = true;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();

  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  GenerationRun run;
  for (auto& r : results) run.stories.push_back(std::move(*r));
  run.retry_table = retry_table(run.stories);
  return run;
}

std::vector<RetryRow> retry_table(const std::vector<Story>& stories) {
  std::vector<RetryRow> rows;
  std::vector<long long> sums;
  for (const auto& s : stories) {
    if (s.authorship.kind != AuthorKind::Llm) continue;
    const auto& model = *s.authorship.model_id;
    auto strategy = *s.authorship.strategy;
    auto it = std::find_if(rows.begin(), rows.end(),
                           [&](const RetryRow& r) { return r.model_id == model && r.strategy == strategy; });
    if (it == rows.end()) {
      rows.push_back({model, strategy, 0, 0.0, 0});
      sums.push_back(0);
      it = rows.end() - 1;
    }
    auto idx = static_cast<std::size_t>(it - rows.begin());
    it->stories++;
    sums[idx] += s.retries;
    it->max_retries = std::max(it->max_retries, s.retries);
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].mean_retries = static_cast<double>(sums[i]) / static_cast<double>(rows[i].stories);
  }
  return rows;
}

std::string retry_table_csv(const std::vector<RetryRow>& rows) {
  std::vector<io::CsvRow> out = {{"model", "strategy", "stories", "mean_retries", "max_retries"}};
  for (const auto& r : rows) {
    char mean[32];
    std::snprintf(mean, sizeof mean, "%.2f", r.mean_retries);
    out.push_back({r.model_id, std::string(to_string(r.strategy)), std::to_string(r.stories), mean,
                   std::to_string(r.max_retries)});
  }
  return io::to_csv(out);
}

}  // namespace psychdepth::storygen
