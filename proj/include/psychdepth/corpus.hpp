#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace psychdepth {

// The five depth components, in the order every table is laid out.
enum class ComponentId : std::uint8_t { AUTH = 0, EMP, ENG, PROV, NCOM };

inline constexpr std::size_t kNumComponents = 5;
inline constexpr std::array<ComponentId, kNumComponents> kAllComponents = {
    ComponentId::AUTH, ComponentId::EMP, ComponentId::ENG, ComponentId::PROV, ComponentId::NCOM};

std::string_view to_string(ComponentId c);        // "AUTH"
std::string_view record_key(ComponentId c);       // "auth"
std::optional<ComponentId> parse_component(std::string_view s);  // either spelling

// A column of an annotation: one of the five components or the humanness rating.
enum class RatingField : std::uint8_t { AUTH = 0, EMP, ENG, PROV, NCOM, HUM };
inline constexpr std::array<RatingField, 6> kAllFields = {RatingField::AUTH, RatingField::EMP,
                                                          RatingField::ENG,  RatingField::PROV,
                                                          RatingField::NCOM, RatingField::HUM};
std::string_view to_string(RatingField f);
constexpr RatingField field_of(ComponentId c) { return static_cast<RatingField>(c); }

inline constexpr int kLikertMin = 1;
inline constexpr int kLikertMax = 5;

struct Premise {
  int id = 0;
  std::string text;
  std::optional<std::string> source_note;

  bool operator==(const Premise&) const = default;
};

enum class AuthorKind : std::uint8_t { Human, Llm };
enum class HumanTier : std::uint8_t { Novice, Intermediate, Advanced };
enum class StrategyId : std::uint8_t { WP, PW };

std::string_view to_string(AuthorKind k);
std::string_view to_string(HumanTier t);
std::string_view to_string(StrategyId s);
std::optional<HumanTier> parse_tier(std::string_view s);
std::optional<StrategyId> parse_strategy(std::string_view s);

struct Authorship {
  AuthorKind kind = AuthorKind::Human;
  std::optional<HumanTier> tier;
  std::optional<std::string> model_id;
  std::optional<StrategyId> strategy;
  std::optional<int> sample_index;

  static Authorship human(HumanTier tier);
  static Authorship llm(std::string model_id, StrategyId strategy, int sample_index);

  // Throws Validation when the human/llm field sets are mixed.
  void validate() const;

  bool operator==(const Authorship&) const = default;
};

// Display label used for author rows: "Human-Advanced" or the model id.
std::string author_class(const Authorship& a);
// Stratum label: tier for humans, model id + strategy for llm stories.
std::string stratum_class(const Authorship& a);

struct Story {
  std::int64_t id = 0;
  int premise_id = 0;
  Authorship authorship;
  std::string text;
  int word_count = 0;
  int retries = 0;
  bool cleaned = false;

  bool operator==(const Story&) const = default;
};

enum class RaterKind : std::uint8_t { Human, Llm };
std::string_view to_string(RaterKind k);

// Component ratings indexed by ComponentId.
using ComponentRatings = std::array<int, kNumComponents>;

struct Annotation {
  std::int64_t story_id = 0;
  std::string rater_id;
  RaterKind rater_kind = RaterKind::Human;
  std::optional<std::string> persona_id;
  ComponentRatings ratings{};
  int humanness = 0;
  std::optional<std::string> justification;

  int rating(ComponentId c) const { return ratings[static_cast<std::size_t>(c)]; }
  int value(RatingField f) const;

  // Throws Range naming the offending field.
  void validate() const;

  bool operator==(const Annotation&) const = default;
};

// Units x raters matrix of ordinal values with missing cells.
class RatingTable {
 public:
  RatingTable(std::vector<std::int64_t> units, std::vector<std::string> raters);

  const std::vector<std::int64_t>& units() const { return units_; }
  const std::vector<std::string>& raters() const { return raters_; }
  std::size_t num_units() const { return units_.size(); }
  std::size_t num_raters() const { return raters_.size(); }

  std::optional<int> cell(std::size_t unit, std::size_t rater) const {
    return cells_[unit * raters_.size() + rater];
  }
  // Throws Range for values outside [1,5].
  void set(std::size_t unit, std::size_t rater, int value);
  std::size_t cell_count() const;

 private:
  std::vector<std::int64_t> units_;
  std::vector<std::string> raters_;
  std::vector<std::optional<int>> cells_;
};

// ---- word counting -------------------------------------------------------

// Maximal runs of non-whitespace code points; whitespace is the Unicode
// White_Space property over UTF-8 input. Invalid bytes count as non-space.
int word_count(std::string_view text);

// ---- serialization -------------------------------------------------------

nlohmann::json to_json(const Premise& p);
nlohmann::json to_json(const Authorship& a);
nlohmann::json to_json(const Story& s);
nlohmann::json to_json(const Annotation& a);
Premise premise_from_json(const nlohmann::json& j);
Story story_from_json(const nlohmann::json& j);
Annotation annotation_from_json(const nlohmann::json& j);

// Sorted by id; throws Parse (with line), DuplicateId, or Validation ("no premises").
std::vector<Premise> ingest_premises(const std::filesystem::path& path);
std::vector<Story> ingest_stories(const std::filesystem::path& path);
// .csv is read as the flat column layout, anything else as JSON lines.
std::vector<Annotation> ingest_annotations(const std::filesystem::path& path);

void write_premises(const std::filesystem::path& path, const std::vector<Premise>& premises);
void write_stories(const std::filesystem::path& path, const std::vector<Story>& stories);
void write_annotations_jsonl(const std::filesystem::path& path, const std::vector<Annotation>& anns);
void write_annotations_csv(const std::filesystem::path& path, const std::vector<Annotation>& anns);

struct AnnotationCounts {
  std::size_t records = 0;
  std::size_t depth_ratings = 0;
  std::size_t humanness_ratings = 0;
  std::size_t justifications = 0;
};
AnnotationCounts count_annotations(const std::vector<Annotation>& anns);

// ---- sampling & pivoting -------------------------------------------------

// Equal allocation across (premise, stratum_class) strata, capped by stratum
// size; leftovers are spread round-robin across premises with a seeded
// rotation over classes. Output sorted by story id.
std::vector<Story> stratified_sample(const std::vector<Story>& stories, std::size_t target,
                                     std::uint64_t seed);

using AnnotationFilter = std::function<bool(const Annotation&)>;
bool human_raters(const Annotation& a);
bool llm_raters(const Annotation& a);

// Units sorted by story id, raters sorted by id. Duplicate (story, rater)
// pairs throw Conflict.
RatingTable pivot_ratings(const std::vector<Annotation>& anns, ComponentId component,
                          const AnnotationFilter& filter = {});
RatingTable pivot_ratings(const std::vector<Annotation>& anns, RatingField field,
                          const AnnotationFilter& filter = {});

}  // namespace psychdepth
