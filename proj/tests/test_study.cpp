#include <doctest.h>

#include <httplib.h>

#include <fstream>
#include <thread>

#include "oracles.hpp"
#include "psychdepth/io.hpp"
#include "psychdepth/study.hpp"

using namespace psychdepth;
using namespace psychdepth::study;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<Story> corpus(int n) {
  std::vector<Story> out;
  for (int i = 0; i < n; ++i) {
    Story s;
    s.id = 1000 + i;
    s.premise_id = i % 3;
    s.authorship = i % 4 == 0 ? Authorship::human(HumanTier::Advanced)
                              : Authorship::llm("GPT-4", i % 2 ? StrategyId::WP : StrategyId::PW, i % 3);
    s.text = "story number " + std::to_string(i);
    s.word_count = word_count(s.text);
    s.retries = 2;
    out.push_back(s);
  }
  return out;
}

std::vector<Premise> premises() {
  return {{0, "premise zero", std::nullopt}, {1, "premise one", std::nullopt}, {2, "premise two", std::nullopt}};
}

json rating(std::int64_t story, int v = 3) {
  return {{"story_id", story}, {"auth", v}, {"emp", v}, {"eng", v}, {"prov", v}, {"ncom", v}, {"humanness", v}};
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::Config;
}

// Rates every story of the rater's open batches until the study reports complete.
void finish(StudyService& svc, const std::string& rater) {
  for (;;) {
    auto b = svc.next_batch(rater);
    if (b.value("complete", false)) return;
    for (const auto& s : b["stories"])
      if (s["status"] == "pending") svc.submit(rater, rating(s["story_id"].get<std::int64_t>()));
  }
}

}  // namespace

TEST_CASE("plan: batches of twenty, shared order") {
  auto plan = make_plan("s", {"a", "b"}, corpus(97), 7);
  CHECK(plan.num_batches() == 5);
  CHECK(plan.batch(1).size() == 20);
  CHECK(plan.batch(5).size() == 17);
  CHECK(make_plan("s", {"a", "b"}, corpus(97), 7).story_order == plan.story_order);
  CHECK(make_plan("s", {"a", "b"}, corpus(97), 8).story_order != plan.story_order);
  CHECK(plan_from_json(to_json(plan)).story_order == plan.story_order);
  CHECK(code_of([] { make_plan("s", {"a", "a"}, corpus(3), 1); }) == ErrorCode::DuplicateId);
  CHECK(code_of([] { make_plan("s", {}, corpus(3), 1); }) == ErrorCode::Validation);
}

TEST_CASE("service: batches, submissions, progress") {
  auto dir = oracle::temp_dir("study");
  auto svc = StudyService::create(dir, make_plan("s", {"a", "b"}, corpus(97), 7), corpus(97), premises());

  auto p0 = svc->progress();
  CHECK(p0["totals"]["annotations"] == 0);
  CHECK(p0["totals"]["depth_ratings"] == 0);

  auto b1 = svc->next_batch("a");
  CHECK(b1["batch_id"] == 1);
  CHECK(b1["stories"].size() == 20);
  auto first = b1["stories"][0]["story_id"].get<std::int64_t>();
  CHECK(b1["stories"][0]["premise"].get<std::string>().rfind("premise", 0) == 0);

  svc->submit("a", rating(first, 2));
  CHECK(svc->progress()["totals"]["depth_ratings"] == 5);
  // Overwrite before close keeps the latest value.
  auto changed = rating(first, 2);
  changed["emp"] = 5;
  svc->submit("a", changed);
  CHECK(svc->annotations().at(0).rating(ComponentId::EMP) == 5);
  CHECK(svc->progress()["totals"]["annotations"] == 1);

  CHECK(code_of([&] { svc->next_batch("mallory"); }) == ErrorCode::Auth);
  auto bad = rating(first);
  bad["auth"] = 0;
  try {
    svc->submit("a", bad);
    FAIL("expected range error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Range);
    CHECK(e.detail().at("field") == "auth");
  }
  auto later = svc->plan().batch(2).front();
  CHECK(code_of([&] { svc->submit("a", rating(later)); }) == ErrorCode::Forbidden);
  CHECK(code_of([&] { svc->submit("a", rating(424242)); }) == ErrorCode::Forbidden);
  auto spoof = rating(first);
  spoof["rater_id"] = "b";
  CHECK(code_of([&] { svc->submit("a", spoof); }) == ErrorCode::Forbidden);
  auto persona = rating(first);
  persona["persona_id"] = "EMP";
  CHECK(code_of([&] { svc->submit("a", persona); }) == ErrorCode::Validation);

  finish(*svc, "a");
  finish(*svc, "b");
  CHECK(svc->next_batch("a")["complete"] == true);
  auto p = svc->progress();
  CHECK(p["totals"]["annotations"] == 194);
  CHECK(p["totals"]["depth_ratings"] == 970);
  // Closed batches are frozen.
  CHECK(code_of([&] { svc->submit("a", rating(first, 1)); }) == ErrorCode::Forbidden);
  CHECK(code_of([&] { StudyService::create(dir, svc->plan(), corpus(97), premises()); }) == ErrorCode::Conflict);
  fs::remove_all(dir);
}

TEST_CASE("service: 5 raters x 97 stories gives the published totals") {
  auto dir = oracle::temp_dir("study97");
  std::vector<std::string> raters = {"r1", "r2", "r3", "r4", "r5"};
  auto svc = StudyService::create(dir, make_plan("s", raters, corpus(97), 1), corpus(97), premises());
  for (const auto& r : raters) finish(*svc, r);
  auto t = svc->progress()["totals"];
  CHECK(t["annotations"] == 485);
  CHECK(t["depth_ratings"] == 2425);
  CHECK(t["humanness_ratings"] == 485);
  fs::remove_all(dir);
}

TEST_CASE("service: acknowledged work survives restart and torn writes") {
  auto dir = oracle::temp_dir("wal");
  std::int64_t first = 0;
  {
    auto svc = StudyService::create(dir, make_plan("s", {"a"}, corpus(30), 3), corpus(30), premises());
    auto b = svc->next_batch("a");
    first = b["stories"][0]["story_id"].get<std::int64_t>();
    svc->submit("a", rating(first, 4));
    svc->submit("a", rating(b["stories"][1]["story_id"].get<std::int64_t>(), 1));
  }
  {
    // Simulate a crash mid-append.
    std::ofstream wal(dir / "submissions.wal", std::ios::app);
    wal << R"({"type":"submit","rater":"a","annotation":{"story_id":)";
  }
  auto svc = StudyService::open(dir);
  auto anns = svc->annotations();
  REQUIRE(anns.size() == 2);
  CHECK(anns[0].rater_kind == RaterKind::Human);
  CHECK(svc->progress()["totals"]["annotations"] == 2);
  svc->submit("a", rating(svc->next_batch("a")["stories"][2]["story_id"].get<std::int64_t>()));
  svc.reset();
  CHECK(StudyService::open(dir)->annotations().size() == 3);
  fs::remove_all(dir);
}

TEST_CASE("http: routes, status codes, blinding") {
  auto dir = oracle::temp_dir("http");
  auto svc = StudyService::create(dir, make_plan("s", {"a"}, corpus(25), 5), corpus(25), premises());
  StudyServer server(*svc);
  int port = server.start();
  httplib::Client cli("127.0.0.1", port);

  auto r = cli.Get("/api/study");
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(json::parse(r->body)["blind"] == true);

  CHECK(cli.Get("/api/batches/next")->status == 401);
  CHECK(cli.Get("/api/batches/next?rater=zed")->status == 401);
  auto next = cli.Get("/api/batches/next?rater=a");
  REQUIRE(next->status == 200);
  auto batch = json::parse(next->body);
  auto id = batch["stories"][0]["story_id"].get<std::int64_t>();
  for (const auto& key : authorship_keys()) CHECK(next->body.find("\"" + key + "\"") == std::string::npos);
  CHECK(next->body.find("GPT-4") == std::string::npos);

  httplib::Headers as_a = {{"X-Rater-Id", "a"}};
  CHECK(cli.Get("/api/stories/" + std::to_string(id), as_a)->status == 200);
  auto outside = svc->plan().batch(2).front();
  CHECK(cli.Get("/api/stories/" + std::to_string(outside), as_a)->status == 403);

  auto ok = cli.Post("/api/annotations", as_a, rating(id).dump(), "application/json");
  CHECK(ok->status == 200);
  auto bad = rating(id);
  bad["ncom"] = 9;
  auto rejected = cli.Post("/api/annotations", as_a, bad.dump(), "application/json");
  CHECK(rejected->status == 422);
  CHECK(json::parse(rejected->body)["detail"]["field"] == "ncom");
  CHECK(cli.Post("/api/annotations", as_a, "{not json", "application/json")->status == 422);
  CHECK(cli.Post("/api/annotations", as_a, rating(outside).dump(), "application/json")->status == 403);
  CHECK(cli.Get("/api/nowhere")->status == 404);

  auto prog = json::parse(cli.Get("/api/progress")->body);
  CHECK(prog["totals"]["depth_ratings"] == 5);
  server.stop();
  fs::remove_all(dir);
}

TEST_CASE("http: an unblinded plan does show authorship") {
  auto dir = oracle::temp_dir("open");
  auto svc = StudyService::create(dir, make_plan("s", {"a"}, corpus(5), 5, false), corpus(5), premises());
  StudyServer server(*svc);
  httplib::Client cli("127.0.0.1", server.start());
  CHECK(cli.Get("/api/batches/next?rater=a")->body.find("\"authorship\"") != std::string::npos);
  server.stop();
  fs::remove_all(dir);
}

TEST_CASE("http status mapping") {
  CHECK(http_status(ErrorCode::Auth) == 401);
  CHECK(http_status(ErrorCode::Forbidden) == 403);
  CHECK(http_status(ErrorCode::MissingComponent) == 422);
  CHECK(http_status(ErrorCode::Io) == 500);
}
