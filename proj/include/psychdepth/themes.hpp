#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "psychdepth/corpus.hpp"
#include "psychdepth/llmio.hpp"

namespace psychdepth::themes {

// Reasons raters give for an authorship guess. Spelling follows the published
// label set, including its "Lirarary" typo.
enum class FeatureId : std::uint8_t {
  isCreative,
  isNuanced,
  isHumorous,
  isInformal,
  isUngrammatical,
  hasAggressiveness,
  hasAdvancedVocab,
  hasAdvancedLirararyTechniques,
  hasUniqueTwists,
  isRepetitive,
  isSimplistic,
  isRobotic,
  isFormulaic,
  hasLowPromptAdherence,
  hasBasicNames,
  hasLessonsLearned,
};
inline constexpr std::size_t kNumFeatures = 16;
extern const std::array<FeatureId, kNumFeatures> kAllFeatures;

std::string_view to_string(FeatureId f);
std::string_view definition(FeatureId f);
// Exact label, ignoring ASCII case.
std::optional<FeatureId> parse_feature(std::string_view s);

using FeatureSet = std::set<FeatureId>;

// Comma- or newline-separated labels; blank or "none" means the empty set.
// Throws UnknownLabel listing every label that is not a feature.
FeatureSet parse_labels(std::string_view text);

llm::ChatRequest build_classification_request(std::string_view justification);

// Throws Precondition for an empty justification; unknown labels are re-asked
// and finally rethrown as UnknownLabel.
FeatureSet classify_justification(const llm::Client& client, std::string_view justification);

enum class LabelSource { Model, Override };

struct LabelRecord {
  std::string justification_id;
  std::int64_t story_id = 0;
  FeatureSet features;
  LabelSource source = LabelSource::Model;
};

nlohmann::json to_json(const LabelRecord& r);
LabelRecord label_from_json(const nlohmann::json& j);
std::vector<LabelRecord> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const std::vector<LabelRecord>& labels);

// "<story_id>:<rater_id>" plus "/<persona_id>" for persona annotations.
std::string justification_id(const Annotation& a);

// Every annotation carrying a non-blank justification, in input order.
std::vector<LabelRecord> classify_annotations(const llm::Client& client, const std::vector<Annotation>& anns,
                                              int workers = 1);

// Replaces the features of matching justification ids and marks them as
// overrides. Throws Join for an override naming an unknown justification.
std::vector<LabelRecord> apply_overrides(std::vector<LabelRecord> labels, const std::vector<LabelRecord>& overrides);

struct FeatureTable {
  std::vector<std::string> authors;
  // fractions[feature][author]: share of the author's labeled stories with the feature.
  std::array<std::vector<double>, kNumFeatures> fractions;
  std::vector<std::size_t> stories_per_author;

  double at(FeatureId f, const std::string& author) const;
};

// Denominator per author: distinct stories of that author present in `labels`.
// Throws Join when a label names an unknown story.
FeatureTable feature_table(const std::vector<LabelRecord>& labels, const std::vector<Story>& stories);
std::string feature_table_csv(const FeatureTable& table);

}  // namespace psychdepth::themes
