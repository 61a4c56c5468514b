#include <doctest.h>

#include <set>

#include "psychdepth/judge.hpp"

using namespace psychdepth;
using namespace psychdepth::judge;
using llm::ScriptStep;

namespace {

const char* kWhy =
    R"("auth_why":"a","emp_why":"b","eng_why":"c","prov_why":"d","ncom_why":"e","humanness_why":"reads like a person")";

std::string judgment(int v, int hum = 3) {
  auto s = std::to_string(v);
  return R"({"auth":)" + s + R"(,"emp":)" + s + R"(,"eng":)" + s + R"(,"prov":)" + s + R"(,"ncom":)" + s +
         R"(,"humanness":)" + std::to_string(hum) + "," + kWhy + "}";
}

llm::Client client_for(std::shared_ptr<llm::Provider> p, int attempts = 1) {
  llm::ProviderConfig c;
  c.provider_id = "mock";
  c.kind = "synthetic";
  c.model_id = "GPT-4o";
  c.max_concurrent = 8;
  c.retry.max_attempts = attempts;
  c.retry.backoff_base = std::chrono::milliseconds(0);
  return llm::Client(c, p, std::make_shared<llm::ConcurrencyGate>(8));
}

Story story(std::int64_t id) {
  Story s;
  s.id = id;
  s.authorship = Authorship::llm("GPT-4", StrategyId::WP, 0);
  s.text = "Once there was a lighthouse.";
  s.word_count = word_count(s.text);
  return s;
}

// Answers by persona: rating = 1 + index of the persona's focus component.
struct ByPersona : llm::Provider {
  std::string fail_for;
  std::string send(const llm::ChatRequest& r) override {
    auto personas = default_personas();
    for (std::size_t i = 0; i < personas.size(); ++i) {
      if (r.system && *r.system == personas[i].system_text) {
        if (personas[i].id == fail_for) throw Error(ErrorCode::Credential, "denied");
        return judgment(static_cast<int>(i) + 1);
      }
    }
    return judgment(3);
  }
};

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::Config;
}

}  // namespace

TEST_CASE("stock personas follow the printed table") {
  auto p = default_personas();
  REQUIRE(p.size() == 5);
  CHECK(p[0].id == "AUTH");
  CHECK(p[4].component_focus == ComponentId::NCOM);
  CHECK(p[1].system_text ==
        "You are a helpful AI who focuses on identifying and assessing moments in the narrative that effectively "
        "evoke empathetic connections with the characters.");
  CHECK(p[2].system_text.find("reader's interest") != std::string::npos);
}

TEST_CASE("judge request layout") {
  auto cfg = JudgeConfig::defaults();
  auto s = story(1);
  auto zero = build_judge_request(s, cfg, std::nullopt);
  CHECK(!zero.system.has_value());
  CHECK(zero.temperature == 0.0);
  CHECK(zero.user.find(s.text) != std::string::npos);
  CHECK(zero.user.find("GPT-4") == std::string::npos);  // authorship never reaches the judge
  auto mop = build_judge_request(s, cfg, cfg.personas[3]);
  CHECK(*mop.system == cfg.personas[3].system_text);
  CHECK(mop.user == zero.user);
}

TEST_CASE("zero-shot judgment becomes an llm annotation") {
  auto p = std::make_shared<llm::ScriptedProvider>(std::vector<ScriptStep>{ScriptStep::reply(judgment(4, 2))});
  auto a = judge_story(client_for(p), story(7), JudgeConfig::defaults());
  CHECK(a.story_id == 7);
  CHECK(a.rater_id == "GPT-4o");
  CHECK(a.rater_kind == RaterKind::Llm);
  CHECK(!a.persona_id.has_value());
  CHECK(a.rating(ComponentId::PROV) == 4);
  CHECK(a.humanness == 2);
  CHECK(a.justification == "reads like a person");
}

TEST_CASE("missing explanation fails with story id attached") {
  auto p = std::make_shared<llm::ScriptedProvider>(std::vector<ScriptStep>{
      ScriptStep::reply(R"({"auth":4,"emp":3,"eng":5,"prov":2,"ncom":1,"humanness":3})")});
  try {
    judge_story(client_for(p), story(11), JudgeConfig::defaults());
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Parse);
    CHECK(e.detail().at("story_id") == 11);
  }
}

TEST_CASE("mixture of personas") {
  auto p = std::make_shared<ByPersona>();
  auto anns = judge_mop(client_for(p), story(3), JudgeConfig::defaults());
  REQUIRE(anns.size() == 5);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < anns.size(); ++i) {
    ids.insert(*anns[i].persona_id);
    CHECK(anns[i].rating(ComponentId::AUTH) == static_cast<int>(i) + 1);
  }
  CHECK(ids.size() == 5);
  auto c = consensus(anns);
  CHECK(c.at(ComponentId::EMP) == doctest::Approx(3.0));
  CHECK(c.raters == 5);
}

TEST_CASE("a failing persona aborts the story") {
  auto p = std::make_shared<ByPersona>();
  p->fail_for = "ENG";
  try {
    judge_mop(client_for(p), story(3), JudgeConfig::defaults());
    FAIL("expected partial failure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::PartialFailure);
    CHECK(e.detail().at("failed").size() == 1);
    CHECK(e.detail().at("completed").size() == 4);
  }
  auto cfg = JudgeConfig::defaults();
  cfg.personas.resize(1);
  CHECK(code_of([&] { judge_mop(client_for(std::make_shared<ByPersona>()), story(1), cfg); }) ==
        ErrorCode::Precondition);
}

TEST_CASE("consensus rejects mixed stories; persona agreement") {
  auto p = std::make_shared<ByPersona>();
  std::vector<Annotation> all;
  for (int s = 0; s < 4; ++s) {
    auto a = judge_mop(client_for(p), story(s), JudgeConfig::defaults());
    all.insert(all.end(), a.begin(), a.end());
  }
  CHECK(code_of([&] { consensus(all); }) == ErrorCode::Aggregation);
  auto by_story = consensus_by_story(all);
  CHECK(by_story.size() == 4);
  // Each persona is perfectly consistent with itself but they disagree with each other.
  CHECK(persona_agreement(all, ComponentId::AUTH) < 0.0);
  CHECK(code_of([] { consensus({}); }) == ErrorCode::Precondition);
}

TEST_CASE("persona generation") {
  auto text =
      "1. AUTH: You are a critic of believable dialogue.\n"
      "2. EMP: \"You are a reader who feels everything.\"\n"
      "- You are a pacing editor.\n";
  auto parsed = parse_personas(text);
  REQUIRE(parsed.size() == 3);
  CHECK(parsed[0].component_focus == ComponentId::AUTH);
  CHECK(parsed[1].system_text == "You are a reader who feels everything.");
  CHECK(parsed[2].system_text == "You are a pacing editor.");

  auto p = std::make_shared<llm::ScriptedProvider>(std::vector<ScriptStep>{ScriptStep::reply(text)});
  CHECK(generate_personas(client_for(p), 3).size() == 3);
  auto short_p = std::make_shared<llm::ScriptedProvider>(std::vector<ScriptStep>{ScriptStep::reply(text)});
  CHECK(code_of([&] { generate_personas(client_for(short_p), 5); }) == ErrorCode::Shortfall);
  CHECK(code_of([&] { generate_personas(client_for(short_p), 0); }) == ErrorCode::Precondition);
}

TEST_CASE("judge manifest") {
  auto m = judge_manifest_from_json({{"provider", "p"}, {"persona_set", "none"}});
  CHECK(m.persona_set == "none");
  CHECK(m.require_explanations);
  CHECK(code_of([] { judge_manifest_from_json({{"provider", "p"}, {"persona_set", "crowd"}}); }) ==
        ErrorCode::Validation);
  llm::ProviderRegistry reg(llm::parse_providers("[p]\nkind = \"synthetic\"\nmodel_id = \"J\"\n"));
  CHECK(code_of([&] { run_judging(reg, {}, m); }) == ErrorCode::Coverage);
}
