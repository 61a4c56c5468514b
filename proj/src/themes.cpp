#include "psychdepth/themes.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <map>
#include <thread>

#include "psychdepth/assets.hpp"
#include "psychdepth/io.hpp"
#include "psychdepth/stats.hpp"

namespace psychdepth::themes {

using nlohmann::json;

const std::array<FeatureId, kNumFeatures> kAllFeatures = {
    FeatureId::isCreative,        FeatureId::isNuanced,
    FeatureId::isHumorous,        FeatureId::isInformal,
    FeatureId::isUngrammatical,   FeatureId::hasAggressiveness,
    FeatureId::hasAdvancedVocab,  FeatureId::hasAdvancedLirararyTechniques,
    FeatureId::hasUniqueTwists,   FeatureId::isRepetitive,
    FeatureId::isSimplistic,      FeatureId::isRobotic,
    FeatureId::isFormulaic,       FeatureId::hasLowPromptAdherence,
    FeatureId::hasBasicNames,     FeatureId::hasLessonsLearned,
};

namespace {

struct FeatureInfo {
  std::string_view name;
  std::string_view definition;
};

constexpr std::array<FeatureInfo, kNumFeatures> kInfo = {{
    {"isCreative", "the story is called creative, original, or imaginative"},
    {"isNuanced", "the story is called nuanced, subtle, layered, or emotionally complex"},
    {"isHumorous", "the story is called funny, witty, or humorous"},
    {"isInformal", "the writing is called casual, conversational, or informal"},
    {"isUngrammatical", "the writing is said to contain grammar, spelling, or punctuation mistakes"},
    {"hasAggressiveness", "the story is said to contain aggression, profanity, or crude language"},
    {"hasAdvancedVocab", "the writing is said to use sophisticated or unusual vocabulary"},
    {"hasAdvancedLirararyTechniques",
     "the writing is said to use advanced literary techniques such as metaphor, foreshadowing, or unusual structure"},
    {"hasUniqueTwists", "the story is said to have a surprising or unique twist"},
    {"isRepetitive", "the writing is said to repeat words, phrases, or ideas"},
    {"isSimplistic", "the story is called simple, shallow, or lacking depth"},
    {"isRobotic", "the writing is called robotic, mechanical, stiff, or lifeless"},
    {"isFormulaic", "the story is called formulaic, predictable, generic, or cliched"},
    {"hasLowPromptAdherence", "the story is said to stray from or ignore the prompt"},
    {"hasBasicNames", "the character names are called generic, common, or typical of AI"},
    {"hasLessonsLearned", "the story is said to end with a moral, lesson, or neat resolution"},
}};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string trim_label(std::string_view s) {
  constexpr std::string_view junk = " \t\r\n\"'`[]{}()*.-";
  auto b = s.find_first_not_of(junk);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(junk);
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::string_view to_string(FeatureId f) { return kInfo[static_cast<std::size_t>(f)].name; }
std::string_view definition(FeatureId f) { return kInfo[static_cast<std::size_t>(f)].definition; }

std::optional<FeatureId> parse_feature(std::string_view s) {
  auto l = lower(s);
  for (auto f : kAllFeatures) {
    if (lower(to_string(f)) == l) return f;
  }
  return std::nullopt;
}

FeatureSet parse_labels(std::string_view text) {
  FeatureSet out;
  json unknown = json::array();
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find_first_of(",\n", pos);
    if (end == std::string_view::npos) end = text.size();
    auto label = trim_label(text.substr(pos, end - pos));
    pos = end + 1;
    if (label.empty() || lower(label) == "none") continue;
    if (auto f = parse_feature(label)) {
      out.insert(*f);
    } else {
      unknown.push_back(label);
    }
  }
  if (!unknown.empty()) {
    throw Error(ErrorCode::UnknownLabel, "unknown feature label(s): " + unknown.dump(), {{"labels", unknown}});
  }
  return out;
}

llm::ChatRequest build_classification_request(std::string_view justification) {
  std::string features;
  for (auto f : kAllFeatures) {
    features += "- " + std::string(to_string(f)) + ": " + std::string(definition(f)) + "\n";
  }
  features.pop_back();
  llm::ChatRequest r;
  r.user = render_template(prompt_asset("themes.user").body,
                           {{"features", features}, {"justification", std::string(justification)}});
  r.temperature = llm::kJudgingTemperature;
  r.max_output_tokens = 256;
  r.purpose = llm::Purpose::Themes;
  return r;
}

FeatureSet classify_justification(const llm::Client& client, std::string_view justification) {
  if (justification.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    throw Error(ErrorCode::Precondition, "justification is empty");
  }
  return client.complete_parsed<FeatureSet>(build_classification_request(justification),
                                            [](const std::string& text) { return parse_labels(text); });
}

json to_json(const LabelRecord& r) {
  json features = json::array();
  for (auto f : r.features) features.push_back(to_string(f));
  return {{"justification_id", r.justification_id},
          {"story_id", r.story_id},
          {"features", features},
          {"source", r.source == LabelSource::Model ? "model" : "override"}};
}

LabelRecord label_from_json(const json& j) {
  LabelRecord r;
  try {
    r.justification_id = j.at("justification_id").get<std::string>();
    r.story_id = j.at("story_id").get<std::int64_t>();
    for (const auto& f : j.at("features")) {
      auto parsed = parse_feature(f.get<std::string>());
      if (!parsed) {
        throw Error(ErrorCode::UnknownLabel, "unknown feature label " + f.dump(), {{"labels", json::array({f})}});
      }
      r.features.insert(*parsed);
    }
    auto source = j.value("source", "model");
    if (source != "model" && source != "override") {
      throw Error(ErrorCode::Validation, "label source must be model or override", {{"field", "source"}});
    }
    r.source = source == "model" ? LabelSource::Model : LabelSource::Override;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("bad label record: ") + e.what());
  }
  return r;
}

std::vector<LabelRecord> read_labels(const std::filesystem::path& path) {
  std::vector<LabelRecord> out;
  for (const auto& j : io::read_jsonl(path)) out.push_back(label_from_json(j));
  return out;
}

void write_labels(const std::filesystem::path& path, const std::vector<LabelRecord>& labels) {
  std::vector<json> records;
  for (const auto& l : labels) records.push_back(to_json(l));
  io::write_file_atomic(path, io::to_jsonl(records));
}

std::string justification_id(const Annotation& a) {
  auto id = std::to_string(a.story_id) + ":" + a.rater_id;
  if (a.persona_id) id += "/" + *a.persona_id;
  return id;
}

std::vector<LabelRecord> classify_annotations(const llm::Client& client, const std::vector<Annotation>& anns,
                                              int workers) {
  std::vector<const Annotation*> todo;
  for (const auto& a : anns) {
    if (a.justification && a.justification->find_first_not_of(" \t\r\n") != std::string::npos) todo.push_back(&a);
  }
  std::vector<LabelRecord> out(todo.size());
  std::vector<std::exception_ptr> errors(todo.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  auto work = [&] {
    while (!failed.load()) {
      auto i = next.fetch_add(1);
      if (i >= todo.size()) return;
      try {
        out[i] = {justification_id(*todo[i]), todo[i]->story_id, classify_justification(client, *todo[i]->justification),
                  LabelSource::Model};
      } catch (...) {
        errors[i] = std::current_exception();
        failed = true;
      }
    }
  };
  workers = std::clamp(workers, 1, std::max<int>(1, static_cast<int>(todo.size())));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::vector<LabelRecord> apply_overrides(std::vector<LabelRecord> labels, const std::vector<LabelRecord>& overrides) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < labels.size(); ++i) index[labels[i].justification_id] = i;
  for (const auto& o : overrides) {
    auto it = index.find(o.justification_id);
    if (it == index.end()) {
      throw Error(ErrorCode::Join, "override names unknown justification " + o.justification_id,
                  {{"justification_id", o.justification_id}});
    }
    auto& l = labels[it->second];
    l.features = o.features;
    l.source = LabelSource::Override;
  }
  return labels;
}

double FeatureTable::at(FeatureId f, const std::string& author) const {
  auto it = std::find(authors.begin(), authors.end(), author);
  if (it == authors.end()) throw Error(ErrorCode::NotFound, "no author " + author + " in feature table");
  return fractions[static_cast<std::size_t>(f)][static_cast<std::size_t>(it - authors.begin())];
}

FeatureTable feature_table(const std::vector<LabelRecord>& labels, const std::vector<Story>& stories) {
  std::map<std::int64_t, const Story*> by_id;
  for (const auto& s : stories) by_id[s.id] = &s;

  // story -> union of features over its justifications
  std::map<std::int64_t, FeatureSet> per_story;
  for (const auto& l : labels) {
    if (!by_id.contains(l.story_id)) {
      throw Error(ErrorCode::Join, "label names unknown story " + std::to_string(l.story_id),
                  {{"story_id", l.story_id}});
    }
    per_story[l.story_id].insert(l.features.begin(), l.features.end());
  }

  FeatureTable t;
  std::vector<Story> labeled;
  for (const auto& [id, fs] : per_story) labeled.push_back(*by_id[id]);
  t.authors = stats::author_order(labeled);
  t.stories_per_author.assign(t.authors.size(), 0);
  for (auto& col : t.fractions) col.assign(t.authors.size(), 0.0);

  auto author_index = [&](const Story& s) {
    auto cls = author_class(s.authorship);
    return static_cast<std::size_t>(std::find(t.authors.begin(), t.authors.end(), cls) - t.authors.begin());
  };
  for (const auto& [id, fs] : per_story) {
    auto a = author_index(*by_id[id]);
    t.stories_per_author[a]++;
    for (auto f : fs) t.fractions[static_cast<std::size_t>(f)][a] += 1.0;
  }
  for (auto& col : t.fractions) {
    for (std::size_t a = 0; a < col.size(); ++a) col[a] /= static_cast<double>(t.stories_per_author[a]);
  }
  return t;
}

std::string feature_table_csv(const FeatureTable& table) {
  std::vector<io::CsvRow> rows;
  io::CsvRow header = {"feature"};
  header.insert(header.end(), table.authors.begin(), table.authors.end());
  rows.push_back(header);
  for (auto f : kAllFeatures) {
    io::CsvRow row = {std::string(to_string(f))};
    for (double v : table.fractions[static_cast<std::size_t>(f)]) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2f", v);
      row.push_back(buf);
    }
    rows.push_back(row);
  }
  return io::to_csv(rows);
}

}  // namespace psychdepth::themes
