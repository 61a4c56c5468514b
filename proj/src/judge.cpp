#include "psychdepth/judge.hpp"

#include <algorithm>
#include <atomic>
#include <future>
#include <set>
#include <sstream>
#include <thread>

#include "psychdepth/assets.hpp"
#include "psychdepth/stats.hpp"

namespace psychdepth::judge {

using nlohmann::json;

std::vector<Persona> default_personas() {
  return {
      {"AUTH", ComponentId::AUTH,
       "You are a helpful AI who specializes in evaluating the genuineness and believability of characters, "
       "dialogue, and scenarios in stories."},
      {"EMP", ComponentId::EMP,
       "You are a helpful AI who focuses on identifying and assessing moments in the narrative that effectively "
       "evoke empathetic connections with the characters."},
      {"ENG", ComponentId::ENG,
       "You are a helpful AI who evaluates how well a story captures and maintains the reader's interest through "
       "pacing, suspense, and narrative flow."},
      {"PROV", ComponentId::PROV,
       "You are a helpful AI who examines the text for its ability to provoke a wide range of intense emotional "
       "responses in the reader."},
      {"NCOM", ComponentId::NCOM,
       "You are a helpful AI who analyzes the structural and thematic intricacy of the plot, character "
       "development, and the use of literary devices."},
  };
}

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// "1. ", "2) ", "- ", "* " list markers.
std::string strip_marker(std::string s) {
  std::size_t i = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')')) return trim(std::string_view(s).substr(i + 1));
  if (!s.empty() && (s[0] == '-' || s[0] == '*')) return trim(std::string_view(s).substr(1));
  return s;
}

}  // namespace

std::vector<Persona> parse_personas(std::string_view text) {
  std::vector<Persona> out;
  std::map<ComponentId, int> used;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t unprefixed = 0;
  while (std::getline(in, line)) {
    auto s = strip_marker(trim(line));
    if (s.empty()) continue;
    std::optional<ComponentId> focus;
    auto colon = s.find(':');
    if (colon != std::string::npos && colon <= 5) {
      focus = parse_component(trim(std::string_view(s).substr(0, colon)));
      if (focus) s = trim(std::string_view(s).substr(colon + 1));
    }
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    if (s.empty()) continue;
    if (!focus) focus = kAllComponents[unprefixed++ % kNumComponents];
    int k = used[*focus]++;
    std::string id(to_string(*focus));
    if (k > 0) id += "-" + std::to_string(k + 1);
    out.push_back({id, *focus, s});
  }
  return out;
}

std::vector<Persona> generate_personas(const llm::Client& client, int n) {
  if (n < 1) throw Error(ErrorCode::Precondition, "persona count must be >= 1", {{"n", n}});
  llm::ChatRequest request;
  request.user = render_template(prompt_asset("personas.user").body, {{"n", std::to_string(n)}});
  request.temperature = llm::kGenerationTemperature;
  request.purpose = llm::Purpose::Personas;
  auto personas = parse_personas(client.complete(request).text);
  if (personas.size() < static_cast<std::size_t>(n)) {
    throw Error(ErrorCode::Shortfall,
                "asked for " + std::to_string(n) + " personas, parsed " + std::to_string(personas.size()),
                {{"requested", n}, {"parsed", personas.size()}});
  }
  personas.resize(static_cast<std::size_t>(n));
  return personas;
}

JudgeConfig JudgeConfig::defaults() {
  JudgeConfig c;
  c.instructions_text = prompt_asset("judge_instructions").body;
  c.personas = default_personas();
  return c;
}

llm::ChatRequest build_judge_request(const Story& story, const JudgeConfig& config,
                                     const std::optional<Persona>& persona) {
  llm::ChatRequest r;
  if (persona) r.system = persona->system_text;
  const auto& instructions =
      config.instructions_text.empty() ? prompt_asset("judge_instructions").body : config.instructions_text;
  r.user = render_template(prompt_asset("judge_user").body, {{"instructions", instructions}, {"story", story.text}});
  r.temperature = llm::kJudgingTemperature;
  r.max_output_tokens = 1024;
  r.purpose = llm::Purpose::Judge;
  return r;
}

Annotation judge_story(const llm::Client& client, const Story& story, const JudgeConfig& config,
                       const std::optional<Persona>& persona) {
  try {
    auto record = client.complete_structured(build_judge_request(story, config, persona), config.require_explanations);
    Annotation a;
    a.story_id = story.id;
    a.rater_id = client.config().model_id;
    a.rater_kind = RaterKind::Llm;
    if (persona) a.persona_id = persona->id;
    a.ratings = record.ratings;
    a.humanness = record.humanness;
    if (!record.humanness_explanation.empty()) a.justification = record.humanness_explanation;
    a.validate();
    return a;
  } catch (const Error& e) {
    auto detail = e.detail().is_object() ? e.detail() : json::object();
    detail["story_id"] = story.id;
    if (persona) detail["persona_id"] = persona->id;
    throw Error(e.code(), "story " + std::to_string(story.id) + ": " + e.what(), detail);
  }
}

std::vector<Annotation> judge_mop(const llm::Client& client, const Story& story, const JudgeConfig& config) {
  if (config.personas.size() < 2) {
    throw Error(ErrorCode::Precondition, "mixture of personas needs at least two personas",
                {{"personas", config.personas.size()}});
  }
  std::vector<std::future<Annotation>> futures;
  for (const auto& p : config.personas) {
    futures.push_back(std::async(std::launch::async, [&client, &story, &config, p] {
      return judge_story(client, story, config, p);
    }));
  }
  std::vector<Annotation> out;
  json completed = json::array();
  json failed = json::array();
  for (std::size_t i = 0; i < futures.size(); ++i) {
    try {
      out.push_back(futures[i].get());
      completed.push_back(config.personas[i].id);
    } catch (const Error& e) {
      failed.push_back({{"persona_id", config.personas[i].id}, {"error", to_string(e.code())}, {"message", e.what()}});
    }
  }
  if (!failed.empty()) {
    std::string names;
    for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f["persona_id"].get<std::string>();
    throw Error(ErrorCode::PartialFailure, "story " + std::to_string(story.id) + ": personas failed: " + names,
                {{"story_id", story.id}, {"completed", completed}, {"failed", failed}});
  }
  return out;
}

Consensus consensus(const std::vector<Annotation>& anns) {
  if (anns.empty()) throw Error(ErrorCode::Precondition, "consensus over no annotations");
  Consensus c;
  c.story_id = anns.front().story_id;
  for (const auto& a : anns) {
    if (a.story_id != c.story_id) {
      throw Error(ErrorCode::Aggregation, "consensus mixes stories " + std::to_string(c.story_id) + " and " +
                                              std::to_string(a.story_id));
    }
    for (std::size_t k = 0; k < kNumComponents; ++k) c.components[k] += a.ratings[k];
    c.humanness += a.humanness;
  }
  auto n = static_cast<double>(anns.size());
  for (auto& v : c.components) v /= n;
  c.humanness /= n;
  c.raters = anns.size();
  return c;
}

std::vector<Consensus> consensus_by_story(const std::vector<Annotation>& anns) {
  std::map<std::int64_t, std::vector<Annotation>> groups;
  for (const auto& a : anns) groups[a.story_id].push_back(a);
  std::vector<Consensus> out;
  for (const auto& [id, g] : groups) out.push_back(consensus(g));
  return out;
}

double persona_agreement(const std::vector<Annotation>& anns, ComponentId component) {
  std::set<std::string> personas;
  std::vector<Annotation> relabeled = anns;
  for (auto& a : relabeled) {
    auto p = a.persona_id.value_or("");
    personas.insert(a.rater_id + "/" + p);
    a.rater_id += "/" + p;
  }
  if (personas.size() < 2) {
    throw Error(ErrorCode::Precondition, "persona agreement needs at least two personas",
                {{"personas", personas.size()}});
  }
  return stats::krippendorff_ordinal_alpha(pivot_ratings(relabeled, component));
}

JudgeManifest judge_manifest_from_json(const json& j) {
  JudgeManifest m;
  try {
    m.provider_id = j.at("provider").get<std::string>();
    m.model_id = j.value("model_id", "");
    m.persona_set = j.value("persona_set", m.persona_set);
    m.generated_personas = j.value("generated_personas", m.generated_personas);
    m.require_explanations = j.value("require_explanations", m.require_explanations);
    m.workers = j.value("workers", m.workers);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("bad judge manifest: ") + e.what());
  }
  if (m.persona_set != "default" && m.persona_set != "none" && m.persona_set != "generated") {
    throw Error(ErrorCode::Validation, "persona_set must be default, none or generated", {{"field", "persona_set"}});
  }
  return m;
}

JudgeRun run_judging(llm::ProviderRegistry& registry, const std::vector<Story>& stories,
                     const JudgeManifest& manifest) {
  if (stories.empty()) throw Error(ErrorCode::Coverage, "no stories to judge");
  auto client = registry.client(manifest.provider_id, manifest.model_id);

  JudgeRun run;
  JudgeConfig config;
  config.instructions_text = prompt_asset("judge_instructions").body;
  config.require_explanations = manifest.require_explanations;
  if (manifest.persona_set == "default") config.personas = default_personas();
  if (manifest.persona_set == "generated") config.personas = generate_personas(client, manifest.generated_personas);
  run.personas = config.personas;
  run.instructions_version = prompt_asset("judge_instructions").version();

  std::vector<const Story*> order;
  for (const auto& s : stories) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](const Story* a, const Story* b) { return a->id < b->id; });

  std::vector<std::vector<Annotation>> results(order.size());
  std::vector<std::exception_ptr> errors(order.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  auto work = [&] {
    while (!failed.load()) {
      auto i = next.fetch_add(1);
      if (i >= order.size()) return;
      try {
        if (config.personas.size() >= 2) {
          results[i] = judge_mop(client, *order[i], config);
        } else if (config.personas.size() == 1) {
          results[i] = {judge_story(client, *order[i], config, config.personas.front())};
        } else {
          results[i] = {judge_story(client, *order[i], config)};
        }
      } catch (...) {
        errors[i] = std::current_exception();
        failed = true;
      }
    }
  };
  int workers = manifest.workers > 0 ? manifest.workers : client.config().max_concurrent;
  workers = std::clamp(workers, 1, static_cast<int>(order.size()));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (auto& r : results) {
    for (auto& a : r) run.annotations.push_back(std::move(a));
  }
  return run;
}

}  // namespace psychdepth::judge
