#include "psychdepth/corpus.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <tuple>

#include "psychdepth/error.hpp"
#include "psychdepth/io.hpp"

namespace psychdepth {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kNumComponents> kComponentNames = {"AUTH", "EMP", "ENG",
                                                                         "PROV", "NCOM"};
constexpr std::array<std::string_view, kNumComponents> kComponentKeys = {"auth", "emp", "eng",
                                                                        "prov", "ncom"};

bool in_likert(int v) { return v >= kLikertMin && v <= kLikertMax; }

}  // namespace

std::string_view to_string(ComponentId c) { return kComponentNames[static_cast<std::size_t>(c)]; }
std::string_view record_key(ComponentId c) { return kComponentKeys[static_cast<std::size_t>(c)]; }

std::optional<ComponentId> parse_component(std::string_view s) {
  for (auto c : kAllComponents) {
    if (s == to_string(c) || s == record_key(c)) return c;
  }
  return std::nullopt;
}

std::string_view to_string(RatingField f) {
  if (f == RatingField::HUM) return "HUM";
  return to_string(static_cast<ComponentId>(f));
}

std::string_view to_string(AuthorKind k) { return k == AuthorKind::Human ? "human" : "llm"; }
std::string_view to_string(RaterKind k) { return k == RaterKind::Human ? "human" : "llm"; }

std::string_view to_string(HumanTier t) {
  switch (t) {
    case HumanTier::Novice: return "Novice";
    case HumanTier::Intermediate: return "Intermediate";
    case HumanTier::Advanced: return "Advanced";
  }
  return "";
}

std::string_view to_string(StrategyId s) { return s == StrategyId::WP ? "WP" : "PW"; }

std::optional<HumanTier> parse_tier(std::string_view s) {
  for (auto t : {HumanTier::Novice, HumanTier::Intermediate, HumanTier::Advanced}) {
    if (s == to_string(t)) return t;
  }
  return std::nullopt;
}

std::optional<StrategyId> parse_strategy(std::string_view s) {
  if (s == "WP") return StrategyId::WP;
  if (s == "PW" || s == "P+W") return StrategyId::PW;
  return std::nullopt;
}

Authorship Authorship::human(HumanTier tier) {
  Authorship a;
  a.kind = AuthorKind::Human;
  a.tier = tier;
  return a;
}

Authorship Authorship::llm(std::string model_id, StrategyId strategy, int sample_index) {
  Authorship a;
  a.kind = AuthorKind::Llm;
  a.model_id = std::move(model_id);
  a.strategy = strategy;
  a.sample_index = sample_index;
  return a;
}

void Authorship::validate() const {
  if (kind == AuthorKind::Human) {
    if (!tier || model_id || strategy || sample_index) {
      throw Error(ErrorCode::Validation, "human authorship requires a tier and no llm fields");
    }
  } else {
    if (tier || !model_id || model_id->empty() || !strategy || !sample_index || *sample_index < 0) {
      throw Error(ErrorCode::Validation,
                  "llm authorship requires model_id, strategy and sample_index >= 0, and no tier");
    }
  }
}

std::string author_class(const Authorship& a) {
  if (a.kind == AuthorKind::Human) return "Human-" + std::string(to_string(*a.tier));
  return *a.model_id;
}

std::string stratum_class(const Authorship& a) {
  if (a.kind == AuthorKind::Human) return "Human-" + std::string(to_string(*a.tier));
  return *a.model_id + "/" + std::string(to_string(*a.strategy));
}

int Annotation::value(RatingField f) const {
  if (f == RatingField::HUM) return humanness;
  return ratings[static_cast<std::size_t>(f)];
}

void Annotation::validate() const {
  for (auto c : kAllComponents) {
    if (!in_likert(rating(c))) {
      throw Error(ErrorCode::Range,
                  std::string(record_key(c)) + " must be an integer in [1,5], got " +
                      std::to_string(rating(c)),
                  {{"field", record_key(c)}, {"value", rating(c)}});
    }
  }
  if (!in_likert(humanness)) {
    throw Error(ErrorCode::Range,
                "humanness must be an integer in [1,5], got " + std::to_string(humanness),
                {{"field", "humanness"}, {"value", humanness}});
  }
  if (rater_id.empty()) {
    throw Error(ErrorCode::Validation, "rater_id is empty", {{"field", "rater_id"}});
  }
  if (persona_id && rater_kind != RaterKind::Llm) {
    throw Error(ErrorCode::Validation, "persona_id is only valid for llm raters",
                {{"field", "persona_id"}});
  }
}

// ---- RatingTable ---------------------------------------------------------

RatingTable::RatingTable(std::vector<std::int64_t> units, std::vector<std::string> raters)
    : units_(std::move(units)), raters_(std::move(raters)), cells_(units_.size() * raters_.size()) {}

void RatingTable::set(std::size_t unit, std::size_t rater, int value) {
  if (!in_likert(value)) {
    throw Error(ErrorCode::Range, "rating table value out of [1,5]: " + std::to_string(value),
                {{"value", value}});
  }
  cells_.at(unit * raters_.size() + rater) = value;
}

std::size_t RatingTable::cell_count() const {
  return static_cast<std::size_t>(
      std::count_if(cells_.begin(), cells_.end(), [](const auto& c) { return c.has_value(); }));
}

// ---- word count ----------------------------------------------------------

namespace {

bool is_unicode_space(char32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

// Decodes one code point starting at text[i]; malformed sequences yield a
// single non-space unit so they still count toward words.
char32_t decode_utf8(std::string_view text, std::size_t& i) {
  auto b0 = static_cast<unsigned char>(text[i]);
  std::size_t len = b0 < 0x80 ? 1 : (b0 >> 5) == 0x6 ? 2 : (b0 >> 4) == 0xE ? 3 : (b0 >> 3) == 0x1E ? 4 : 0;
  if (len == 0 || i + len > text.size()) {
    ++i;
    return 0xFFFD;
  }
  char32_t cp = len == 1 ? b0 : len == 2 ? (b0 & 0x1F) : len == 3 ? (b0 & 0x0F) : (b0 & 0x07);
  for (std::size_t k = 1; k < len; ++k) {
    auto b = static_cast<unsigned char>(text[i + k]);
    if ((b >> 6) != 0x2) {
      ++i;
      return 0xFFFD;
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  i += len;
  return cp;
}

}  // namespace

int word_count(std::string_view text) {
  int words = 0;
  bool in_word = false;
  std::size_t i = 0;
  while (i < text.size()) {
    bool space = is_unicode_space(decode_utf8(text, i));
    if (!space && !in_word) ++words;
    in_word = !space;
  }
  return words;
}

// ---- JSON ----------------------------------------------------------------

json to_json(const Premise& p) {
  json j = {{"id", p.id}, {"text", p.text}};
  if (p.source_note) j["source_note"] = *p.source_note;
  return j;
}

json to_json(const Authorship& a) {
  json j = {{"kind", to_string(a.kind)}};
  if (a.tier) j["tier"] = to_string(*a.tier);
  if (a.model_id) j["model_id"] = *a.model_id;
  if (a.strategy) j["strategy"] = to_string(*a.strategy);
  if (a.sample_index) j["sample_index"] = *a.sample_index;
  return j;
}

json to_json(const Story& s) {
  return {{"id", s.id},
          {"premise_id", s.premise_id},
          {"authorship", to_json(s.authorship)},
          {"text", s.text},
          {"word_count", s.word_count},
          {"retries", s.retries},
          {"cleaned", s.cleaned}};
}

json to_json(const Annotation& a) {
  json j = {{"story_id", a.story_id}, {"rater_id", a.rater_id}, {"rater_kind", to_string(a.rater_kind)}};
  if (a.persona_id) j["persona_id"] = *a.persona_id;
  for (auto c : kAllComponents) j[std::string(record_key(c))] = a.rating(c);
  j["humanness"] = a.humanness;
  if (a.justification) j["justification"] = *a.justification;
  return j;
}

namespace {

template <typename T>
T require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    throw Error(ErrorCode::Validation, std::string("missing field '") + key + "'", {{"field", key}});
  }
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::Validation, std::string("field '") + key + "' has the wrong type",
                {{"field", key}});
  }
}

std::optional<std::string> optional_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) {
    throw Error(ErrorCode::Validation, std::string("field '") + key + "' must be a string",
                {{"field", key}});
  }
  return it->get<std::string>();
}

int likert_field(const json& j, std::string_view key, ErrorCode missing_code) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    throw Error(missing_code, "missing rating '" + std::string(key) + "'", {{"field", key}});
  }
  if (!it->is_number_integer()) {
    throw Error(ErrorCode::Range, std::string(key) + " must be an integer in [1,5]", {{"field", key}});
  }
  int v = it->get<int>();
  if (!in_likert(v)) {
    throw Error(ErrorCode::Range,
                std::string(key) + " must be an integer in [1,5], got " + std::to_string(v),
                {{"field", key}, {"value", v}});
  }
  return v;
}

Authorship authorship_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::Validation, "authorship must be an object");
  Authorship a;
  auto kind = require<std::string>(j, "kind");
  if (kind == "human") {
    a.kind = AuthorKind::Human;
    auto tier = parse_tier(require<std::string>(j, "tier"));
    if (!tier) throw Error(ErrorCode::Validation, "unknown tier", {{"field", "tier"}});
    a.tier = tier;
  } else if (kind == "llm") {
    a.kind = AuthorKind::Llm;
  } else {
    throw Error(ErrorCode::Validation, "unknown authorship kind '" + kind + "'", {{"field", "kind"}});
  }
  if (j.contains("model_id")) a.model_id = require<std::string>(j, "model_id");
  if (j.contains("strategy")) {
    auto s = parse_strategy(require<std::string>(j, "strategy"));
    if (!s) throw Error(ErrorCode::Validation, "unknown strategy", {{"field", "strategy"}});
    a.strategy = s;
  }
  if (j.contains("sample_index")) a.sample_index = require<int>(j, "sample_index");
  if (kind == "llm" && j.contains("tier")) a.tier = parse_tier(require<std::string>(j, "tier"));
  a.validate();
  return a;
}

const std::set<std::string, std::less<>> kAnnotationKeys = {
    "story_id", "rater_id", "rater_kind", "persona_id", "auth",         "emp",
    "eng",      "prov",     "ncom",       "humanness",  "justification"};

}  // namespace

Premise premise_from_json(const json& j) {
  Premise p;
  p.id = require<int>(j, "id");
  p.text = require<std::string>(j, "text");
  p.source_note = optional_string(j, "source_note");
  if (p.text.empty()) {
    throw Error(ErrorCode::Validation, "premise " + std::to_string(p.id) + " has empty text",
                {{"field", "text"}, {"id", p.id}});
  }
  return p;
}

Story story_from_json(const json& j) {
  Story s;
  s.id = require<std::int64_t>(j, "id");
  s.premise_id = require<int>(j, "premise_id");
  auto it = j.find("authorship");
  if (it == j.end()) throw Error(ErrorCode::Validation, "missing field 'authorship'", {{"field", "authorship"}});
  s.authorship = authorship_from_json(*it);
  s.text = require<std::string>(j, "text");
  s.word_count = j.contains("word_count") ? require<int>(j, "word_count") : word_count(s.text);
  s.retries = j.contains("retries") ? require<int>(j, "retries") : 0;
  s.cleaned = j.contains("cleaned") ? require<bool>(j, "cleaned") : false;
  if (s.word_count != word_count(s.text)) {
    throw Error(ErrorCode::Validation,
                "story " + std::to_string(s.id) + ": word_count does not match text",
                {{"field", "word_count"}, {"id", s.id}});
  }
  if (s.retries < 0) throw Error(ErrorCode::Validation, "retries must be >= 0", {{"field", "retries"}});
  return s;
}

Annotation annotation_from_json(const json& j) {
  for (const auto& [key, _] : j.items()) {
    if (!kAnnotationKeys.contains(key)) {
      throw Error(ErrorCode::Parse, "unknown key '" + key + "' in annotation record", {{"key", key}});
    }
  }
  Annotation a;
  a.story_id = require<std::int64_t>(j, "story_id");
  a.rater_id = require<std::string>(j, "rater_id");
  auto kind = optional_string(j, "rater_kind").value_or("human");
  if (kind == "human") {
    a.rater_kind = RaterKind::Human;
  } else if (kind == "llm") {
    a.rater_kind = RaterKind::Llm;
  } else {
    throw Error(ErrorCode::Validation, "unknown rater_kind '" + kind + "'", {{"field", "rater_kind"}});
  }
  a.persona_id = optional_string(j, "persona_id");
  for (auto c : kAllComponents) {
    a.ratings[static_cast<std::size_t>(c)] = likert_field(j, record_key(c), ErrorCode::MissingComponent);
  }
  a.humanness = likert_field(j, "humanness", ErrorCode::Validation);
  a.justification = optional_string(j, "justification");
  a.validate();
  return a;
}

// ---- ingestion -----------------------------------------------------------

namespace {

template <typename T, typename F>
std::vector<T> parse_records(const std::filesystem::path& path, F&& convert) {
  auto records = io::read_jsonl(path);
  std::vector<T> out;
  out.reserve(records.size());
  // read_jsonl skips blank lines, so recount to name the physical line.
  auto text = io::read_file(path);
  std::vector<int> line_of;
  int lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    ++lineno;
    auto line = std::string_view(text).substr(pos, end - pos);
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) line_of.push_back(lineno);
    pos = end + 1;
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      out.push_back(convert(records[i]));
    } catch (const Error& e) {
      auto detail = e.detail();
      detail["line"] = line_of[i];
      detail["path"] = path.string();
      throw Error(e.code(),
                  path.filename().string() + ":" + std::to_string(line_of[i]) + ": " + e.what(),
                  detail);
    }
  }
  return out;
}

std::vector<Annotation> parse_annotation_csv(const std::filesystem::path& path) {
  auto rows = io::parse_csv(io::read_file(path));
  if (rows.empty()) return {};
  const auto& header = rows.front();
  std::map<std::string, std::size_t, std::less<>> col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (!kAnnotationKeys.contains(header[i])) {
      throw Error(ErrorCode::Parse, "unknown column '" + header[i] + "' in " + path.filename().string(),
                  {{"key", header[i]}, {"path", path.string()}});
    }
    col[header[i]] = i;
  }
  std::vector<Annotation> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    json j = json::object();
    for (const auto& [name, idx] : col) {
      if (idx >= row.size() || row[idx].empty()) continue;
      const auto& v = row[idx];
      bool numeric = name == "story_id" || name == "humanness" || parse_component(name).has_value();
      if (numeric) {
        try {
          std::size_t used = 0;
          long long n = std::stoll(v, &used);
          if (used != v.size()) throw std::invalid_argument(v);
          j[name] = n;
        } catch (const std::exception&) {
          throw Error(ErrorCode::Range,
                      path.filename().string() + ": row " + std::to_string(r + 1) + ": " + name +
                          " is not an integer",
                      {{"field", name}, {"line", r + 1}});
        }
      } else {
        j[name] = v;
      }
    }
    try {
      out.push_back(annotation_from_json(j));
    } catch (const Error& e) {
      auto detail = e.detail();
      detail["line"] = r + 1;
      throw Error(e.code(), path.filename().string() + ": row " + std::to_string(r + 1) + ": " + e.what(),
                  detail);
    }
  }
  return out;
}

}  // namespace

std::vector<Premise> ingest_premises(const std::filesystem::path& path) {
  auto premises = parse_records<Premise>(path, premise_from_json);
  if (premises.empty()) {
    throw Error(ErrorCode::Validation, "no premises in " + path.string(), {{"path", path.string()}});
  }
  std::sort(premises.begin(), premises.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < premises.size(); ++i) {
    if (premises[i].id == premises[i - 1].id) {
      throw Error(ErrorCode::DuplicateId, "duplicate premise id " + std::to_string(premises[i].id),
                  {{"id", premises[i].id}});
    }
  }
  return premises;
}

std::vector<Story> ingest_stories(const std::filesystem::path& path) {
  auto stories = parse_records<Story>(path, story_from_json);
  std::set<std::int64_t> seen;
  for (const auto& s : stories) {
    if (!seen.insert(s.id).second) {
      throw Error(ErrorCode::DuplicateId, "duplicate story id " + std::to_string(s.id), {{"id", s.id}});
    }
  }
  return stories;
}

std::vector<Annotation> ingest_annotations(const std::filesystem::path& path) {
  if (path.extension() == ".csv") return parse_annotation_csv(path);
  return parse_records<Annotation>(path, annotation_from_json);
}

void write_premises(const std::filesystem::path& path, const std::vector<Premise>& premises) {
  std::vector<json> records;
  for (const auto& p : premises) records.push_back(to_json(p));
  io::write_file_atomic(path, io::to_jsonl(records));
}

void write_stories(const std::filesystem::path& path, const std::vector<Story>& stories) {
  std::vector<json> records;
  for (const auto& s : stories) records.push_back(to_json(s));
  io::write_file_atomic(path, io::to_jsonl(records));
}

void write_annotations_jsonl(const std::filesystem::path& path, const std::vector<Annotation>& anns) {
  std::vector<json> records;
  for (const auto& a : anns) records.push_back(to_json(a));
  io::write_file_atomic(path, io::to_jsonl(records));
}

void write_annotations_csv(const std::filesystem::path& path, const std::vector<Annotation>& anns) {
  std::vector<io::CsvRow> rows;
  rows.push_back({"story_id", "rater_id", "rater_kind", "persona_id", "auth", "emp", "eng", "prov",
                  "ncom", "humanness", "justification"});
  for (const auto& a : anns) {
    io::CsvRow row = {std::to_string(a.story_id), a.rater_id, std::string(to_string(a.rater_kind)),
                      a.persona_id.value_or("")};
    for (auto c : kAllComponents) row.push_back(std::to_string(a.rating(c)));
    row.push_back(std::to_string(a.humanness));
    row.push_back(a.justification.value_or(""));
    rows.push_back(std::move(row));
  }
  io::write_file_atomic(path, io::to_csv(rows));
}

AnnotationCounts count_annotations(const std::vector<Annotation>& anns) {
  AnnotationCounts c;
  c.records = anns.size();
  c.depth_ratings = kNumComponents * anns.size();
  c.humanness_ratings = anns.size();
  c.justifications = static_cast<std::size_t>(std::count_if(anns.begin(), anns.end(), [](const auto& a) {
    return a.justification && !a.justification->empty();
  }));
  return c;
}

// ---- sampling ------------------------------------------------------------

std::vector<Story> stratified_sample(const std::vector<Story>& stories, std::size_t target,
                                     std::uint64_t seed) {
  if (target > stories.size()) {
    throw Error(ErrorCode::Size,
                "sample target " + std::to_string(target) + " exceeds " + std::to_string(stories.size()) +
                    " stories",
                {{"target", target}, {"available", stories.size()}});
  }
  using Key = std::pair<int, std::string>;
  std::map<Key, std::vector<const Story*>> strata;
  for (const auto& s : stories) strata[{s.premise_id, stratum_class(s.authorship)}].push_back(&s);

  std::mt19937_64 rng(seed);
  for (auto& [key, members] : strata) {
    std::sort(members.begin(), members.end(), [](auto* a, auto* b) { return a->id < b->id; });
    std::shuffle(members.begin(), members.end(), rng);
  }

  // Water-fill: the largest per-stratum level q with sum(min(size, q)) <= target.
  std::size_t level = 0;
  auto filled = [&](std::size_t q) {
    std::size_t total = 0;
    for (const auto& [key, members] : strata) total += std::min(members.size(), q);
    return total;
  };
  std::size_t max_size = 0;
  for (const auto& [key, members] : strata) max_size = std::max(max_size, members.size());
  while (level < max_size && filled(level + 1) <= target) ++level;

  std::map<Key, std::size_t> alloc;
  for (const auto& [key, members] : strata) alloc[key] = std::min(members.size(), level);
  std::size_t leftover = target - filled(level);

  std::vector<int> premise_ids;
  std::vector<std::string> classes;
  {
    std::set<int> p;
    std::set<std::string> c;
    for (const auto& [key, members] : strata) {
      p.insert(key.first);
      c.insert(key.second);
    }
    premise_ids.assign(p.begin(), p.end());
    classes.assign(c.begin(), c.end());
  }
  std::shuffle(premise_ids.begin(), premise_ids.end(), rng);
  std::shuffle(classes.begin(), classes.end(), rng);

  // One pass of rounds visits every (premise, class) pair exactly once; each
  // round gives every premise at most one extra story.
  for (std::size_t round = 0; round < classes.size() && leftover > 0; ++round) {
    for (std::size_t pi = 0; pi < premise_ids.size() && leftover > 0; ++pi) {
      Key key{premise_ids[pi], classes[(pi + round) % classes.size()]};
      auto it = strata.find(key);
      if (it == strata.end() || alloc[key] >= it->second.size()) continue;
      ++alloc[key];
      --leftover;
    }
  }

  std::vector<Story> out;
  out.reserve(target);
  for (const auto& [key, members] : strata) {
    for (std::size_t i = 0; i < alloc[key]; ++i) out.push_back(*members[i]);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

// ---- pivoting ------------------------------------------------------------

bool human_raters(const Annotation& a) { return a.rater_kind == RaterKind::Human; }
bool llm_raters(const Annotation& a) { return a.rater_kind == RaterKind::Llm; }

RatingTable pivot_ratings(const std::vector<Annotation>& anns, ComponentId component,
                          const AnnotationFilter& filter) {
  return pivot_ratings(anns, field_of(component), filter);
}

RatingTable pivot_ratings(const std::vector<Annotation>& anns, RatingField field,
                          const AnnotationFilter& filter) {
  std::set<std::int64_t> unit_set;
  std::set<std::string> rater_set;
  std::vector<const Annotation*> kept;
  for (const auto& a : anns) {
    if (filter && !filter(a)) continue;
    kept.push_back(&a);
    unit_set.insert(a.story_id);
    rater_set.insert(a.rater_id);
  }
  if (kept.empty()) throw Error(ErrorCode::InsufficientData, "no annotations match the rater filter");

  RatingTable table({unit_set.begin(), unit_set.end()}, {rater_set.begin(), rater_set.end()});
  const auto& units = table.units();
  const auto& raters = table.raters();
  for (const auto* a : kept) {
    auto u = static_cast<std::size_t>(std::lower_bound(units.begin(), units.end(), a->story_id) - units.begin());
    auto r = static_cast<std::size_t>(std::lower_bound(raters.begin(), raters.end(), a->rater_id) - raters.begin());
    if (table.cell(u, r)) {
      throw Error(ErrorCode::Conflict,
                  "duplicate rating for story " + std::to_string(a->story_id) + " by rater " + a->rater_id,
                  {{"story_id", a->story_id}, {"rater_id", a->rater_id}});
    }
    table.set(u, r, a->value(field));
  }
  return table;
}

}  // namespace psychdepth
