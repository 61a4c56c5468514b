#pragma once

#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "psychdepth/corpus.hpp"
#include "psychdepth/llmio.hpp"

namespace psychdepth::storygen {

struct GenLimits {
  int min_words = 400;
  int max_words = 600;
  // Generous against the worst observed average (~139 attempts per story).
  int max_attempts = 300;

  void validate() const;
  int target_words() const { return (min_words + max_words) / 2; }
};

llm::ChatRequest render_writer_profile_prompt(const Premise& premise);
llm::ChatRequest render_character_prompt(const Premise& premise);
// Throws Precondition for empty portraits.
llm::ChatRequest render_story_prompt(const Premise& premise, const std::string& portraits,
                                     const GenLimits& limits = {});

// System and user text joined by a blank line, the way the prompts are usually
// printed.
std::string flatten(const llm::ChatRequest& request);

struct CleanupPatterns {
  // Each pattern is tried against the first line of the text (case-insensitive).
  std::vector<std::regex> preamble;

  static CleanupPatterns defaults();
};

struct CleanResult {
  std::string text;
  bool cleaned = false;
};

// Drops leading acknowledgment paragraphs and code-fence wrappers. The story
// body is otherwise returned byte for byte.
CleanResult clean_story(std::string_view text, const CleanupPatterns& patterns = CleanupPatterns::defaults());

struct GenerationStats {
  int story_completions = 0;
  int character_completions = 0;
  std::vector<int> rejected_word_counts;
};

// Regenerates until a cleaned candidate falls inside the length window. For PW
// both phases are rerun on every attempt. `seed`, when set, is offset by the
// attempt index so each attempt is a distinct request. Throws
// GenerationExhausted after limits.max_attempts story completions.
Story generate_story(const llm::Client& client, const Premise& premise, StrategyId strategy,
                     const GenLimits& limits, const Authorship& authorship,
                     std::optional<std::uint64_t> seed = std::nullopt, GenerationStats* stats = nullptr,
                     const CleanupPatterns& patterns = CleanupPatterns::defaults());

// ---- grid runs -----------------------------------------------------------------

struct ModelSpec {
  std::string model_id;
  std::string provider_id;
};

struct GenerationManifest {
  std::vector<ModelSpec> models;
  std::vector<StrategyId> strategies = {StrategyId::WP, StrategyId::PW};
  int samples = 3;
  std::vector<int> premise_ids;  // empty = every premise
  std::uint64_t seed = 0;
  GenLimits limits;
  std::int64_t first_story_id = 0;
  int workers = 0;  // 0 = sum of provider concurrency limits

  void validate() const;
};

GenerationManifest manifest_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GenerationManifest& m);

struct RetryRow {
  std::string model_id;
  StrategyId strategy = StrategyId::WP;
  std::size_t stories = 0;
  double mean_retries = 0.0;
  int max_retries = 0;
};

struct GenerationRun {
  std::vector<Story> stories;  // grid order: model, strategy, premise, sample
  std::vector<RetryRow> retry_table;
};

// Seed for one grid cell, stable across runs and platforms.
std::uint64_t cell_seed(std::uint64_t manifest_seed, const std::string& model_id, StrategyId strategy,
                        int premise_id, int sample_index);

GenerationRun run_generation(llm::ProviderRegistry& registry, const std::vector<Premise>& premises,
                             const GenerationManifest& manifest);

std::vector<RetryRow> retry_table(const std::vector<Story>& stories);
std::string retry_table_csv(const std::vector<RetryRow>& rows);

}  // namespace psychdepth::storygen
