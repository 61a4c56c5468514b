#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "psychdepth/corpus.hpp"
#include "psychdepth/error.hpp"

namespace httplib {
class Server;
}

namespace psychdepth::study {

inline constexpr std::size_t kBatchSize = 20;

struct StudyPlan {
  std::string study_id;
  std::vector<std::string> raters;
  bool blind = true;
  std::size_t batch_size = kBatchSize;
  // Presentation order, identical for every rater.
  std::vector<std::int64_t> story_order;

  void validate() const;
  std::size_t num_batches() const;
  // 1-based batch ids.
  std::vector<std::int64_t> batch(std::size_t batch_id) const;
};

nlohmann::json to_json(const StudyPlan& p);
StudyPlan plan_from_json(const nlohmann::json& j);

// Shuffles the story ids with the seed and cuts batches of batch_size.
StudyPlan make_plan(std::string study_id, std::vector<std::string> raters, const std::vector<Story>& stories,
                    std::uint64_t seed, bool blind = true, std::size_t batch_size = kBatchSize);

// Keys stripped from every story served under a blind plan.
const std::vector<std::string>& authorship_keys();

// Annotation collection state. Every method is thread-safe. Submissions and
// batch closures are appended to a write-ahead log and fsynced before the call
// returns, so acknowledged work survives a restart.
class StudyService {
 public:
  // Opens <dir>/plan.json, stories.jsonl and premises.jsonl, then replays
  // <dir>/submissions.wal.
  static std::unique_ptr<StudyService> open(const std::filesystem::path& dir);
  // Writes the plan and corpus into `dir` and opens it. Throws Conflict when a
  // plan already exists there.
  static std::unique_ptr<StudyService> create(const std::filesystem::path& dir, const StudyPlan& plan,
                                              const std::vector<Story>& stories,
                                              const std::vector<Premise>& premises);

  const StudyPlan& plan() const { return plan_; }

  // Lowest batch that is not closed; a fully done batch is closed here and
  // the next one returned. {"complete": true} once every batch is closed.
  // Unknown rater -> Auth.
  nlohmann::json next_batch(const std::string& rater);
  // Forbidden unless the story is in the rater's open batch.
  nlohmann::json story(const std::string& rater, std::int64_t story_id) const;
  // Validation (422) for bad payloads, Forbidden (403) for stories outside the
  // open batch, Auth (401) for unknown raters.
  nlohmann::json submit(const std::string& rater, const nlohmann::json& payload);
  nlohmann::json progress() const;
  nlohmann::json study_info() const;

  // Human annotations in (rater, story) order.
  std::vector<Annotation> annotations() const;

 private:
  StudyService() = default;

  struct RaterState {
    std::map<std::int64_t, Annotation> submitted;
    std::set<std::size_t> closed;  // batch ids
  };

  void require_rater(const std::string& rater) const;
  std::optional<std::size_t> open_batch(const RaterState& st) const;
  std::size_t batch_of(std::int64_t story_id) const;
  nlohmann::json story_view(std::int64_t story_id) const;
  void append_wal(const nlohmann::json& record);
  void apply(const nlohmann::json& record);

  std::filesystem::path dir_;
  StudyPlan plan_;
  std::map<std::int64_t, Story> stories_;
  std::map<int, Premise> premises_;
  std::map<std::int64_t, std::size_t> batch_index_;
  std::map<std::string, RaterState> raters_;
  mutable std::mutex mu_;
  int wal_fd_ = -1;

 public:
  ~StudyService();
  StudyService(const StudyService&) = delete;
  StudyService& operator=(const StudyService&) = delete;
};

// HTTP binding of StudyService. Errors are returned as {"error","message",
// "detail"} with 401/403/404/422/400 status codes.
class StudyServer {
 public:
  explicit StudyServer(StudyService& service);
  ~StudyServer();

  // Binds and serves on a background thread; returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Blocks serving on the calling thread.
  bool listen(const std::string& host, int port);
  void stop();

 private:
  StudyService& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

int http_status(ErrorCode code);

}  // namespace psychdepth::study
