#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "oracles.hpp"
#include "psychdepth/io.hpp"
#include "psychdepth/llmio.hpp"

using namespace psychdepth;
using namespace psychdepth::llm;
using nlohmann::json;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::Config;
}

ProviderConfig scripted_config(int attempts = 3) {
  ProviderConfig c;
  c.provider_id = "mock";
  c.kind = "synthetic";
  c.model_id = "mock-model";
  c.retry.max_attempts = attempts;
  c.retry.backoff_base = std::chrono::milliseconds(0);
  return c;
}

const char* kJudgment = R"({"auth":4,"emp":3,"eng":5,"prov":2,"ncom":1,"humanness":3})";

ChatRequest judge_request() {
  ChatRequest r;
  r.user = "rate this";
  r.purpose = Purpose::Judge;
  return r;
}

}  // namespace

TEST_CASE("providers file") {
  auto providers = parse_providers(R"(
# comment
[openai]
kind = "openai"
endpoint = "https://api.example.com/v1"
credential = "OPENAI_API_KEY"   # env var name
model_id = "gpt-4o"
supports_schema_constraint = true
max_concurrent = 4
backoff_ms = 250

[offline]
kind = "synthetic"
in_window_rate = 0.5
seed = 9
)");
  REQUIRE(providers.size() == 2);
  const auto& o = providers.at("openai");
  CHECK(o.endpoint == "https://api.example.com/v1");
  CHECK(o.credential_env == "OPENAI_API_KEY");
  CHECK(o.supports_schema_constraint);
  CHECK(o.max_concurrent == 4);
  CHECK(o.retry.backoff_base.count() == 250);
  CHECK(providers.at("offline").options.at("in_window_rate").get<double>() == 0.5);

  CHECK(code_of([] { parse_providers("[x]\nkind = \"openai\"\n"); }) == ErrorCode::Config);
  CHECK(code_of([] { parse_providers("kind = \"synthetic\"\n"); }) == ErrorCode::Config);
  CHECK(code_of([] { parse_providers("[x]\nkind = bare words\n"); }) == ErrorCode::Config);
}

TEST_CASE("judgment parsing") {
  auto r = parse_judgment(kJudgment);
  CHECK(r.rating(ComponentId::AUTH) == 4);
  CHECK(r.rating(ComponentId::NCOM) == 1);
  CHECK(r.humanness == 3);
  CHECK(code_of([] { parse_judgment(R"({"auth":4,"emp":3,"eng":5,"prov":2,"humanness":3})"); }) == ErrorCode::Parse);
  CHECK(code_of([] { parse_judgment(R"({"auth":7,"emp":3,"eng":5,"prov":2,"ncom":1,"humanness":3})"); }) ==
        ErrorCode::Range);
  CHECK(code_of([] { parse_judgment("not json"); }) == ErrorCode::Parse);
  CHECK(code_of([] { parse_judgment(kJudgment, true); }) == ErrorCode::Parse);

  auto wrapped = std::string("Sure, here you go: {not this one} and then ") + kJudgment + " -- hope it helps {";
  auto e = extract_judgment(wrapped);
  REQUIRE(e.has_value());
  CHECK(e->rating(ComponentId::ENG) == 5);
  CHECK(!extract_judgment("no braces at all").has_value());
  // Braces inside strings do not unbalance the scan.
  auto tricky = R"({"auth":4,"auth_why":"a } brace","emp":3,"eng":5,"prov":2,"ncom":1,"humanness":3})";
  CHECK(extract_judgment(tricky).has_value());

  auto schema = judgment_schema(true);
  CHECK(schema.at("additionalProperties") == false);
  CHECK(schema.at("required").size() == 12);
  CHECK(schema.at("properties").at("auth").at("maximum") == 5);
}

TEST_CASE("client retries transport failures only") {
  auto p = std::make_shared<ScriptedProvider>(
      std::vector<ScriptStep>{ScriptStep::fail(), ScriptStep::fail(), ScriptStep::reply("ok")});
  Client c(scripted_config(3), p);
  auto done = c.complete(judge_request());
  CHECK(done.text == "ok");
  CHECK(done.attempts == 3);

  auto p2 = std::make_shared<ScriptedProvider>(std::vector<ScriptStep>{ScriptStep::fail(), ScriptStep::fail()});
  Client c2(scripted_config(2), p2);
  CHECK(code_of([&] { c2.complete(judge_request()); }) == ErrorCode::Transport);

  auto p3 = std::make_shared<ScriptedProvider>(
      std::vector<ScriptStep>{ScriptStep::auth_fail(), ScriptStep::reply("never")});
  Client c3(scripted_config(3), p3);
  CHECK(code_of([&] { c3.complete(judge_request()); }) == ErrorCode::Credential);
  CHECK(p3->calls() == 1);

  auto p4 = std::make_shared<ScriptedProvider>(std::vector<ScriptStep>{});
  Client c4(scripted_config(1), p4);
  CHECK(code_of([&] { c4.complete(judge_request()); }) == ErrorCode::ScriptExhausted);
}

TEST_CASE("structured completions") {
  auto strict_cfg = scripted_config(2);
  strict_cfg.supports_schema_constraint = true;
  auto p = std::make_shared<ScriptedProvider>(std::vector<ScriptStep>{ScriptStep::reply(kJudgment)});
  Client strict(strict_cfg, p);
  CHECK(strict.complete_structured(judge_request()).humanness == 3);
  CHECK(p->requests().at(0).response_schema.has_value());

  // Lenient: prose around the object, one unparsable reply then a good one.
  auto p2 = std::make_shared<ScriptedProvider>(std::vector<ScriptStep>{
      ScriptStep::reply("I cannot rate this."), ScriptStep::reply(std::string("Ratings: ") + kJudgment)});
  Client lenient(scripted_config(2), p2);
  auto r = lenient.complete_structured(judge_request());
  CHECK(r.rating(ComponentId::EMP) == 3);
  CHECK(!p2->requests().at(0).response_schema.has_value());

  auto p3 = std::make_shared<ScriptedProvider>(
      std::vector<ScriptStep>{ScriptStep::reply("nope"), ScriptStep::reply("still nope")});
  Client failing(scripted_config(2), p3);
  try {
    failing.complete_structured(judge_request());
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Parse);
    CHECK(e.detail().at("raw").size() == 2);
  }
}

TEST_CASE("concurrency gate caps in-flight requests") {
  auto gate = std::make_shared<ConcurrencyGate>(2);
  std::atomic<int> inflight{0}, worst{0};
  struct Slow : Provider {
    std::atomic<int>* inflight;
    std::atomic<int>* worst;
    std::string send(const ChatRequest&) override {
      int now = ++*inflight;
      int prev = worst->load();
      while (now > prev && !worst->compare_exchange_weak(prev, now)) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      --*inflight;
      return "ok";
    }
  };
  auto slow = std::make_shared<Slow>();
  slow->inflight = &inflight;
  slow->worst = &worst;
  Client c(scripted_config(), slow, gate);
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) threads.emplace_back([&] { c.complete(judge_request()); });
  for (auto& t : threads) t.join();
  CHECK(worst.load() <= 2);
  CHECK(gate->peak() <= 2);
}

TEST_CASE("replay log reproduces a run") {
  auto dir = oracle::temp_dir("replay");
  auto providers = parse_providers("[syn]\nkind = \"synthetic\"\nmodel_id = \"M\"\nseed = 3\n");
  std::vector<std::string> first;
  {
    ProviderRegistry reg(providers);
    reg.set_replay_log(std::make_shared<ReplayLog>(dir / "log.jsonl"));
    auto c = reg.client("syn");
    for (int i = 0; i < 3; ++i) {
      ChatRequest r;
      r.user = "story " + std::to_string(i);
      r.purpose = Purpose::Story;
      r.seed = i;
      first.push_back(c.complete(r).text);
    }
  }
  ProviderRegistry replay(providers);
  replay.set_replay_source(dir / "log.jsonl");
  auto c = replay.client("syn");
  for (int i = 2; i >= 0; --i) {  // keyed, so order does not matter
    ChatRequest r;
    r.user = "story " + std::to_string(i);
    r.purpose = Purpose::Story;
    r.seed = i;
    CHECK(c.complete(r).text == first[i]);
  }
  ChatRequest unseen;
  unseen.user = "never recorded";
  CHECK(code_of([&] { c.complete(unseen); }) == ErrorCode::ScriptExhausted);
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic provider is deterministic per request") {
  auto cfg = parse_providers("[s]\nkind = \"synthetic\"\nmodel_id = \"M\"\n").at("s");
  SyntheticProvider a(cfg), b(cfg);
  ChatRequest r;
  r.user = "Now write a story";
  r.purpose = Purpose::Story;
  r.seed = 42;
  CHECK(a.send(r) == b.send(r));
  ChatRequest j = judge_request();
  j.response_schema = judgment_schema(false);
  CHECK_NOTHROW(parse_judgment(a.send(j)));
}

TEST_CASE("http provider speaks chat completions") {
  httplib::Server server;
  json last_body;
  std::string last_auth;
  std::atomic<int> status{200};
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    last_body = json::parse(req.body);
    last_auth = req.get_header_value("Authorization");
    res.status = status;
    res.set_content(json{{"choices", {{{"message", {{"role", "assistant"}, {"content", kJudgment}}}}}}}.dump(),
                    "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("PSYCHDEPTH_TEST_KEY", "sk-test", 1);
  auto cfg = parse_providers("[h]\nkind = \"openai\"\nendpoint = \"http://127.0.0.1:" + std::to_string(port) +
                             "/v1\"\ncredential = \"PSYCHDEPTH_TEST_KEY\"\nmodel_id = \"gpt-test\"\n"
                             "supports_schema_constraint = true\nmax_attempts = 1\n")
                 .at("h");
  Client c(cfg, make_provider(cfg));
  ChatRequest r = judge_request();
  r.system = "be a judge";
  r.seed = 5;
  auto rec = c.complete_structured(r, false);
  CHECK(rec.rating(ComponentId::AUTH) == 4);
  CHECK(last_auth == "Bearer sk-test");
  CHECK(last_body.at("model") == "gpt-test");
  CHECK(last_body.at("messages").size() == 2);
  CHECK(last_body.at("seed") == 5);
  CHECK(last_body.at("response_format").at("type") == "json_schema");

  status = 401;
  CHECK(code_of([&] { c.complete(r); }) == ErrorCode::Credential);
  status = 503;
  CHECK(code_of([&] { c.complete(r); }) == ErrorCode::Transport);
  ::unsetenv("PSYCHDEPTH_TEST_KEY");
  CHECK(code_of([&] { c.complete(r); }) == ErrorCode::Credential);

  server.stop();
  t.join();
}
