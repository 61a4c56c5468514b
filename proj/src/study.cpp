#include "psychdepth/study.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <random>

#include "psychdepth/io.hpp"

namespace psychdepth::study {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- plan ----------------------------------------------------------------------

void StudyPlan::validate() const {
  if (study_id.empty()) throw Error(ErrorCode::Validation, "study_id is empty", {{"field", "study_id"}});
  if (raters.empty()) throw Error(ErrorCode::Validation, "study has no raters", {{"field", "raters"}});
  std::set<std::string> seen_raters(raters.begin(), raters.end());
  if (seen_raters.size() != raters.size()) throw Error(ErrorCode::DuplicateId, "rater listed twice");
  if (seen_raters.contains("")) throw Error(ErrorCode::Validation, "empty rater id", {{"field", "raters"}});
  if (batch_size < 1 || batch_size > kBatchSize) {
    throw Error(ErrorCode::Validation, "batch_size must be in [1, 20]", {{"field", "batch_size"}});
  }
  if (story_order.empty()) throw Error(ErrorCode::Validation, "study has no stories", {{"field", "story_order"}});
  std::set<std::int64_t> seen(story_order.begin(), story_order.end());
  if (seen.size() != story_order.size()) throw Error(ErrorCode::DuplicateId, "story listed twice in study plan");
}

std::size_t StudyPlan::num_batches() const { return (story_order.size() + batch_size - 1) / batch_size; }

std::vector<std::int64_t> StudyPlan::batch(std::size_t batch_id) const {
  if (batch_id < 1 || batch_id > num_batches()) throw Error(ErrorCode::NotFound, "no batch " + std::to_string(batch_id));
  auto begin = (batch_id - 1) * batch_size;
  auto end = std::min(begin + batch_size, story_order.size());
  return {story_order.begin() + static_cast<std::ptrdiff_t>(begin),
          story_order.begin() + static_cast<std::ptrdiff_t>(end)};
}

json to_json(const StudyPlan& p) {
  return {{"study_id", p.study_id},
          {"raters", p.raters},
          {"blind", p.blind},
          {"batch_size", p.batch_size},
          {"story_order", p.story_order}};
}

StudyPlan plan_from_json(const json& j) {
  StudyPlan p;
  try {
    p.study_id = j.at("study_id").get<std::string>();
    p.raters = j.at("raters").get<std::vector<std::string>>();
    p.blind = j.value("blind", true);
    p.batch_size = j.value("batch_size", kBatchSize);
    p.story_order = j.at("story_order").get<std::vector<std::int64_t>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("bad study plan: ") + e.what());
  }
  p.validate();
  return p;
}

StudyPlan make_plan(std::string study_id, std::vector<std::string> raters, const std::vector<Story>& stories,
                    std::uint64_t seed, bool blind, std::size_t batch_size) {
  StudyPlan p;
  p.study_id = std::move(study_id);
  p.raters = std::move(raters);
  p.blind = blind;
  p.batch_size = batch_size;
  for (const auto& s : stories) p.story_order.push_back(s.id);
  std::sort(p.story_order.begin(), p.story_order.end());
  // Fisher-Yates on raw engine output so the order does not depend on the
  // standard library's distribution implementation.
  std::mt19937_64 rng(seed);
  for (std::size_t i = p.story_order.size(); i > 1; --i) {
    std::swap(p.story_order[i - 1], p.story_order[rng() % i]);
  }
  p.validate();
  return p;
}

const std::vector<std::string>& authorship_keys() {
  static const std::vector<std::string> keys = {"authorship", "kind",    "tier",   "model_id",
                                                "strategy",   "sample_index", "retries", "cleaned"};
  return keys;
}

// ---- service ---------------------------------------------------------------------

namespace {

void fsync_dir(const fs::path& dir) {
  int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

}  // namespace

StudyService::~StudyService() {
  if (wal_fd_ >= 0) ::close(wal_fd_);
}

std::unique_ptr<StudyService> StudyService::create(const fs::path& dir, const StudyPlan& plan,
                                                   const std::vector<Story>& stories,
                                                   const std::vector<Premise>& premises) {
  plan.validate();
  if (fs::exists(dir / "plan.json")) {
    throw Error(ErrorCode::Conflict, "a study already exists in " + dir.string(), {{"dir", dir.string()}});
  }
  fs::create_directories(dir);
  std::set<std::int64_t> wanted(plan.story_order.begin(), plan.story_order.end());
  std::vector<Story> chosen;
  std::set<int> premise_ids;
  for (const auto& s : stories) {
    if (wanted.contains(s.id)) {
      chosen.push_back(s);
      premise_ids.insert(s.premise_id);
    }
  }
  if (chosen.size() != wanted.size()) throw Error(ErrorCode::Join, "study plan names stories that are not in the corpus");
  std::vector<Premise> used;
  for (const auto& p : premises) {
    if (premise_ids.contains(p.id)) used.push_back(p);
  }
  write_stories(dir / "stories.jsonl", chosen);
  write_premises(dir / "premises.jsonl", used);
  io::write_file_atomic(dir / "plan.json", to_json(plan).dump(2) + "\n");
  return open(dir);
}

std::unique_ptr<StudyService> StudyService::open(const fs::path& dir) {
  std::unique_ptr<StudyService> svc(new StudyService());
  svc->dir_ = dir;
  try {
    svc->plan_ = plan_from_json(json::parse(io::read_file(dir / "plan.json")));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Parse, "plan.json: " + std::string(e.what()));
  }
  for (auto& s : ingest_stories(dir / "stories.jsonl")) svc->stories_.emplace(s.id, std::move(s));
  for (auto& p : ingest_premises(dir / "premises.jsonl")) svc->premises_.emplace(p.id, std::move(p));
  const auto& plan = svc->plan_;
  for (std::size_t i = 0; i < plan.story_order.size(); ++i) {
    auto id = plan.story_order[i];
    auto it = svc->stories_.find(id);
    if (it == svc->stories_.end()) {
      throw Error(ErrorCode::Join, "plan names unknown story " + std::to_string(id), {{"story_id", id}});
    }
    if (!svc->premises_.contains(it->second.premise_id)) {
      throw Error(ErrorCode::Join, "story " + std::to_string(id) + " names unknown premise",
                  {{"story_id", id}, {"premise_id", it->second.premise_id}});
    }
    svc->batch_index_[id] = i / plan.batch_size + 1;
  }
  for (const auto& r : plan.raters) svc->raters_[r];

  auto wal_path = dir / "submissions.wal";
  if (fs::exists(wal_path)) {
    auto text = io::read_file(wal_path);
    std::size_t pos = 0;
    int line = 0;
    while (pos < text.size()) {
      auto eol = text.find('\n', pos);
      bool complete = eol != std::string::npos;
      auto rec = text.substr(pos, complete ? eol - pos : std::string::npos);
      pos = complete ? eol + 1 : text.size();
      ++line;
      if (rec.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        svc->apply(json::parse(rec));
      } catch (const json::parse_error&) {
        if (!complete) break;  // torn final write from a crash: never acknowledged
        throw Error(ErrorCode::Parse, "submissions.wal line " + std::to_string(line) + " is corrupt",
                    {{"line", line}});
      }
    }
    if (!text.empty() && text.back() != '\n') {
      // Drop the torn tail so later appends start on a fresh line.
      fs::resize_file(wal_path, text.rfind('\n') == std::string::npos ? 0 : text.rfind('\n') + 1);
    }
  }
  svc->wal_fd_ = ::open(wal_path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (svc->wal_fd_ < 0) throw Error(ErrorCode::Io, "cannot open " + wal_path.string() + ": " + std::strerror(errno));
  fsync_dir(dir);
  return svc;
}

void StudyService::append_wal(const json& record) {
  auto line = record.dump() + "\n";
  const char* p = line.data();
  std::size_t left = line.size();
  while (left > 0) {
    auto n = ::write(wal_fd_, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::Io, std::string("write-ahead log write failed: ") + std::strerror(errno));
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  if (::fsync(wal_fd_) != 0) throw Error(ErrorCode::Io, std::string("write-ahead log fsync failed: ") + std::strerror(errno));
}

void StudyService::apply(const json& record) {
  auto type = record.at("type").get<std::string>();
  auto& st = raters_.at(record.at("rater").get<std::string>());
  if (type == "submit") {
    auto a = annotation_from_json(record.at("annotation"));
    st.submitted[a.story_id] = std::move(a);
  } else if (type == "close") {
    st.closed.insert(record.at("batch").get<std::size_t>());
  }
}

void StudyService::require_rater(const std::string& rater) const {
  if (!raters_.contains(rater)) {
    throw Error(ErrorCode::Auth, rater.empty() ? "rater id required" : "unknown rater");
  }
}

std::optional<std::size_t> StudyService::open_batch(const RaterState& st) const {
  for (std::size_t b = 1; b <= plan_.num_batches(); ++b) {
    if (!st.closed.contains(b)) return b;
  }
  return std::nullopt;
}

std::size_t StudyService::batch_of(std::int64_t story_id) const {
  auto it = batch_index_.find(story_id);
  return it == batch_index_.end() ? 0 : it->second;
}

json StudyService::story_view(std::int64_t story_id) const {
  const auto& s = stories_.at(story_id);
  json j = {{"story_id", s.id},
            {"premise_id", s.premise_id},
            {"premise", premises_.at(s.premise_id).text},
            {"text", s.text},
            {"word_count", s.word_count}};
  if (!plan_.blind) j["authorship"] = to_json(s.authorship);
  return j;
}

json StudyService::next_batch(const std::string& rater) {
  std::lock_guard lock(mu_);
  require_rater(rater);
  auto& st = raters_.at(rater);
  while (auto b = open_batch(st)) {
    auto ids = plan_.batch(*b);
    std::size_t done = 0;
    for (auto id : ids) done += st.submitted.contains(id) ? 1 : 0;
    if (done == ids.size()) {
      append_wal({{"type", "close"}, {"rater", rater}, {"batch", *b}});
      st.closed.insert(*b);
      continue;
    }
    json stories = json::array();
    for (auto id : ids) {
      auto v = story_view(id);
      v["status"] = st.submitted.contains(id) ? "done" : "pending";
      stories.push_back(std::move(v));
    }
    return {{"batch_id", *b},
            {"batches", plan_.num_batches()},
            {"size", ids.size()},
            {"done", done},
            {"stories", stories}};
  }
  return {{"complete", true}, {"batches", plan_.num_batches()}};
}

json StudyService::story(const std::string& rater, std::int64_t story_id) const {
  std::lock_guard lock(mu_);
  require_rater(rater);
  const auto& st = raters_.at(rater);
  auto b = batch_of(story_id);
  if (b == 0) throw Error(ErrorCode::Forbidden, "story is not part of this study", {{"story_id", story_id}});
  if (open_batch(st) != b) throw Error(ErrorCode::Forbidden, "story is not in the rater's open batch", {{"story_id", story_id}});
  auto v = story_view(story_id);
  v["status"] = st.submitted.contains(story_id) ? "done" : "pending";
  return v;
}

json StudyService::submit(const std::string& rater, const json& payload) {
  if (!payload.is_object()) throw Error(ErrorCode::Validation, "annotation must be a JSON object");
  std::lock_guard lock(mu_);
  require_rater(rater);
  auto body = payload;
  if (body.contains("rater_id") && body["rater_id"] != rater) {
    throw Error(ErrorCode::Forbidden, "rater_id does not match the authenticated rater");
  }
  if (body.contains("persona_id") && !body["persona_id"].is_null()) {
    throw Error(ErrorCode::Validation, "persona_id is not allowed for human annotations", {{"field", "persona_id"}});
  }
  if (body.contains("rater_kind") && body["rater_kind"] != "human") {
    throw Error(ErrorCode::Validation, "rater_kind must be human", {{"field", "rater_kind"}});
  }
  body["rater_id"] = rater;
  body["rater_kind"] = "human";
  Annotation a = annotation_from_json(body);

  auto& st = raters_.at(rater);
  auto b = batch_of(a.story_id);
  if (b == 0) throw Error(ErrorCode::Forbidden, "story is not part of this study", {{"story_id", a.story_id}});
  if (open_batch(st) != b) {
    throw Error(ErrorCode::Forbidden, "story is not in the rater's open batch", {{"story_id", a.story_id}});
  }
  append_wal({{"type", "submit"}, {"rater", rater}, {"annotation", to_json(a)}});
  st.submitted[a.story_id] = a;

  auto ids = plan_.batch(b);
  std::size_t done = 0;
  for (auto id : ids) done += st.submitted.contains(id) ? 1 : 0;
  return {{"ok", true}, {"story_id", a.story_id}, {"batch_id", b}, {"done", done}, {"size", ids.size()}};
}

json StudyService::progress() const {
  std::lock_guard lock(mu_);
  json raters = json::array();
  std::size_t total = 0;
  std::size_t humanness = 0;
  for (const auto& r : plan_.raters) {
    const auto& st = raters_.at(r);
    total += st.submitted.size();
    humanness += st.submitted.size();
    raters.push_back({{"rater", r},
                      {"done", st.submitted.size()},
                      {"pending", plan_.story_order.size() - st.submitted.size()},
                      {"batches_closed", st.closed.size()}});
  }
  return {{"raters", raters},
          {"totals",
           {{"annotations", total},
            {"depth_ratings", total * kNumComponents},
            {"humanness_ratings", humanness},
            {"stories", plan_.story_order.size()},
            {"raters", plan_.raters.size()}}}};
}

json StudyService::study_info() const {
  std::lock_guard lock(mu_);
  return {{"study_id", plan_.study_id},
          {"blind", plan_.blind},
          {"batch_size", plan_.batch_size},
          {"stories", plan_.story_order.size()},
          {"batches", plan_.num_batches()},
          {"raters", plan_.raters.size()}};
}

std::vector<Annotation> StudyService::annotations() const {
  std::lock_guard lock(mu_);
  std::vector<Annotation> out;
  for (const auto& r : plan_.raters) {
    for (const auto& [id, a] : raters_.at(r).submitted) out.push_back(a);
  }
  return out;
}

}  // namespace psychdepth::study
