#pragma once

#include <optional>
#include <string>
#include <vector>

#include "psychdepth/corpus.hpp"
#include "psychdepth/llmio.hpp"

namespace psychdepth::judge {

struct Persona {
  std::string id;
  ComponentId component_focus = ComponentId::AUTH;
  std::string system_text;

  bool operator==(const Persona&) const = default;
};

// The five stock personas, in component order, ids AUTH..NCOM.
std::vector<Persona> default_personas();

// Asks the model for n personas. Lines may carry a "AUTH:"-style focus prefix;
// unprefixed lines are assigned focus round-robin in component order. Throws
// Precondition for n < 1 and Shortfall when fewer than n lines parse.
std::vector<Persona> generate_personas(const llm::Client& client, int n);
std::vector<Persona> parse_personas(std::string_view text);

struct JudgeConfig {
  std::string instructions_text;
  bool require_explanations = true;
  std::vector<Persona> personas;  // empty = plain zero-shot

  static JudgeConfig defaults();  // stock instructions and personas
};

llm::ChatRequest build_judge_request(const Story& story, const JudgeConfig& config,
                                     const std::optional<Persona>& persona);

// Errors propagate with detail.story_id set.
Annotation judge_story(const llm::Client& client, const Story& story, const JudgeConfig& config,
                       const std::optional<Persona>& persona = std::nullopt);

// One annotation per persona, in persona order. Persona requests run
// concurrently; any failure aborts with PartialFailure listing which personas
// completed and which failed.
std::vector<Annotation> judge_mop(const llm::Client& client, const Story& story, const JudgeConfig& config);

struct Consensus {
  std::int64_t story_id = 0;
  std::array<double, kNumComponents> components{};
  double humanness = 0.0;
  std::size_t raters = 0;

  double at(ComponentId c) const { return components[static_cast<std::size_t>(c)]; }
};

// Plain mean per component. Throws Precondition for an empty list and
// Aggregation when story ids differ.
Consensus consensus(const std::vector<Annotation>& anns);
// One consensus per story, ordered by story id.
std::vector<Consensus> consensus_by_story(const std::vector<Annotation>& anns);

// Ordinal alpha across personas (each rater/persona pair is one coder).
// Throws Precondition for fewer than two personas.
double persona_agreement(const std::vector<Annotation>& anns, ComponentId component);

struct JudgeManifest {
  std::string provider_id;
  std::string model_id;
  std::string persona_set = "default";  // default | none | generated
  int generated_personas = 5;
  bool require_explanations = true;
  int workers = 0;  // 0 = provider concurrency limit
};

JudgeManifest judge_manifest_from_json(const nlohmann::json& j);

struct JudgeRun {
  std::vector<Annotation> annotations;  // by story id, then persona order
  std::vector<Persona> personas;
  std::string instructions_version;
};

// Throws Coverage for an empty story list.
JudgeRun run_judging(llm::ProviderRegistry& registry, const std::vector<Story>& stories,
                     const JudgeManifest& manifest);

}  // namespace psychdepth::judge
