#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "psychdepth/error.hpp"
#include "psychdepth/stats.hpp"

using namespace psychdepth;
using namespace psychdepth::stats;

namespace {

RatingTable to_table(const oracle::Matrix& m) {
  std::vector<std::int64_t> units(m.size());
  std::vector<std::string> raters(m.empty() ? 0 : m[0].size());
  for (std::size_t i = 0; i < units.size(); ++i) units[i] = static_cast<std::int64_t>(i);
  for (std::size_t r = 0; r < raters.size(); ++r) raters[r] = "r" + std::to_string(r);
  RatingTable t(units, raters);
  for (std::size_t u = 0; u < m.size(); ++u)
    for (std::size_t r = 0; r < m[u].size(); ++r)
      if (m[u][r]) t.set(u, r, *m[u][r]);
  return t;
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

Story llm_story(std::int64_t id, const std::string& model, StrategyId s) {
  Story st;
  st.id = id;
  st.authorship = Authorship::llm(model, s, 0);
  st.text = "x";
  st.word_count = 1;
  return st;
}

Annotation rate(std::int64_t story, const std::string& rater, int v, int hum = 3) {
  Annotation a;
  a.story_id = story;
  a.rater_id = rater;
  a.ratings = {v, v, v, v, v};
  a.humanness = hum;
  return a;
}

}  // namespace

TEST_CASE("alpha: opposite two-unit table is -0.5") {
  oracle::Matrix m = {{1, 5}, {5, 1}};
  CHECK(krippendorff_ordinal_alpha(to_table(m)) == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("alpha: perfect agreement is exactly one") {
  oracle::Matrix m = {{1, 1, 1}, {3, 3, std::nullopt}, {5, 5, 5}, {2, 2, 2}};
  CHECK(krippendorff_ordinal_alpha(to_table(m)) == 1.0);
}

TEST_CASE("alpha: matches pair enumeration on random tables") {
  std::mt19937_64 rng(7);
  int checked = 0;
  while (checked < 200) {
    auto m = oracle::random_table(rng);
    double expected = oracle::ordinal_alpha(m);
    if (!std::isfinite(expected)) {
      CHECK_THROWS_AS(krippendorff_ordinal_alpha(to_table(m)), Error);
      continue;
    }
    CHECK(std::abs(krippendorff_ordinal_alpha(to_table(m)) - expected) < 1e-9);
    ++checked;
  }
}

TEST_CASE("alpha: degenerate tables") {
  CHECK(code_of([] { krippendorff_ordinal_alpha(to_table({{1, std::nullopt}, {std::nullopt, 2}})); }) ==
        ErrorCode::InsufficientData);
  CHECK(code_of([] { krippendorff_ordinal_alpha(to_table({{3, 3}, {3, 3}})); }) == ErrorCode::UndefinedAlpha);
}

TEST_CASE("ranks average ties") {
  std::vector<double> v = {10, 20, 20, 30};
  auto r = average_ranks(v);
  CHECK(r == std::vector<double>{1, 2.5, 2.5, 4});
}

TEST_CASE("correlations match brute force") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> len(3, 40), small(1, 5);
  std::normal_distribution<double> g;
  for (int i = 0; i < 300; ++i) {
    int n = len(rng);
    std::vector<double> x(n), y(n);
    bool ties = i % 2 == 0;
    for (int k = 0; k < n; ++k) {
      x[k] = ties ? small(rng) : g(rng);
      y[k] = ties ? small(rng) : g(rng) + 0.5 * x[k];
    }
    double ex = oracle::spearman(x, y);
    if (!std::isfinite(ex)) continue;
    CHECK(std::abs(spearman(x, y).coefficient - ex) < 1e-12);
    CHECK(std::abs(pearson(x, y).coefficient - oracle::pearson(x, y)) < 1e-12);
  }
}

TEST_CASE("spearman: monotone transform invariance and known values") {
  std::vector<double> x = {1, 2, 3, 4, 5}, y = {5, 6, 7, 8, 7};
  std::vector<double> x3;
  for (double v : x) x3.push_back(v * v * v + 7);
  CHECK(spearman(x, y).coefficient == spearman(x3, y).coefficient);
  CHECK(spearman(x, x).coefficient == doctest::Approx(1.0));
  std::vector<double> rev = {5, 4, 3, 2, 1};
  CHECK(spearman(x, rev).coefficient == doctest::Approx(-1.0));
  std::vector<double> flat = {2, 2, 2, 2, 2};
  CHECK(code_of([&] { spearman(x, flat); }) == ErrorCode::UndefinedCorrelation);
}

TEST_CASE("spearman: exact permutation p agrees in direction with t approximation") {
  std::vector<double> x = {1, 2, 3, 4, 5, 6, 7}, y = {2, 1, 4, 3, 6, 5, 7};
  auto t = spearman(x, y);
  auto exact = spearman(x, y, PValueMethod::ExactPermutation);
  CHECK(t.coefficient == exact.coefficient);
  CHECK(exact.p_value > 0.0);
  CHECK(exact.p_value < 0.05);
}

TEST_CASE("welch t: antisymmetric and matches hand computation") {
  std::vector<double> a = {1, 2, 3, 4, 5}, b = {2, 4, 6, 8, 10, 12};
  auto ab = welch_t(a, b), ba = welch_t(b, a);
  CHECK(ab.t == -ba.t);
  CHECK(ab.p == ba.p);
  CHECK(ab.df == ba.df);
  // mean 3 var 2.5; mean 7 var 14
  double se = std::sqrt(2.5 / 5 + 14.0 / 6);
  CHECK(ab.t == doctest::Approx((3.0 - 7.0) / se).epsilon(1e-12));
  double va = 2.5 / 5, vb = 14.0 / 6;
  CHECK(ab.df == doctest::Approx((va + vb) * (va + vb) / (va * va / 4 + vb * vb / 5)).epsilon(1e-12));
}

TEST_CASE("mop delta reproduces the printed table") {
  // Judge averages as printed, baseline then MoP.
  CHECK(std::abs(mop_delta_percent(0.2994, 0.3748) - 25.16) < 0.1);
  CHECK(std::abs(mop_delta_percent(0.4307, 0.4790) - 11.23) < 0.1);
  CHECK(std::abs(mop_delta_percent(0.3429, 0.4335) - 26.43) < 0.1);
  CHECK(std::abs(mop_delta_percent(0.4170, 0.5071) - 21.62) < 0.1);
  CHECK(code_of([] { mop_delta_percent(0.0, 0.5); }) == ErrorCode::Undefined);

  std::vector<std::array<double, 5>> base = {{0.0786, 0.4248, 0.1981, 0.3316, 0.4641},
                                             {0.2205, 0.5790, 0.2477, 0.5181, 0.5881},
                                             {0.3867, 0.4637, 0.1800, 0.3551, 0.3289},
                                             {0.4537, 0.5121, 0.2923, 0.4429, 0.3840}};
  std::vector<std::array<double, 5>> mop = {{0.3175, 0.4669, 0.2272, 0.3959, 0.4665},
                                            {0.2525, 0.6793, 0.2775, 0.5695, 0.6163},
                                            {0.4729, 0.6024, 0.1470, 0.4182, 0.5269},
                                            {0.4820, 0.6417, 0.4218, 0.5661, 0.4241}};
  auto row = mop_delta_row(base, mop);
  std::array<double, 5> printed = {33.81, 20.74, 16.93, 18.34, 15.22};
  for (std::size_t c = 0; c < 5; ++c) CHECK(std::abs(row.component_percent[c] - printed[c]) < 0.1);
  CHECK(std::abs(row.average_percent - 20.43) < 0.1);
}

TEST_CASE("mean and std kinds") {
  std::vector<double> v = {1, 2, 3, 4};
  CHECK(mean_std(v, StdKind::Sample).std == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(mean_std(v, StdKind::Population).std == doctest::Approx(std::sqrt(1.25)));
  CHECK(mean_std(v, StdKind::Sample).mean == 2.5);
}

TEST_CASE("cdf points") {
  std::vector<int> r = {1, 1, 3, 5};
  auto p = cdf_points(r);
  CHECK(p[0].cumulative == 0.5);
  CHECK(p[1].cumulative == 0.5);
  CHECK(p[2].cumulative == 0.75);
  CHECK(p[4].cumulative == 1.0);
}

TEST_CASE("author summary and strategy delta") {
  std::vector<Story> stories = {llm_story(1, "M", StrategyId::WP), llm_story(2, "M", StrategyId::PW)};
  Story h;
  h.id = 3;
  h.authorship = Authorship::human(HumanTier::Advanced);
  h.text = "x";
  h.word_count = 1;
  stories.push_back(h);
  std::vector<Annotation> anns = {rate(1, "a", 2), rate(1, "b", 4), rate(2, "a", 4), rate(2, "b", 4),
                                  rate(3, "a", 5), rate(3, "b", 3)};
  auto s = author_summary(anns, stories);
  CHECK(s.authors == std::vector<std::string>{"M", "Human-Advanced"});
  CHECK(s.at("M", RatingField::EMP).mean == doctest::Approx(3.5));
  CHECK(s.at("Human-Advanced", RatingField::AUTH).mean == doctest::Approx(4.0));

  auto d = strategy_delta(anns, stories);
  REQUIRE(d.models == std::vector<std::string>{"M"});
  CHECK(d.deltas[0][0] == doctest::Approx((4.0 - 3.0) / 3.0));

  anns.push_back(rate(99, "a", 3));
  CHECK(code_of([&] { author_summary(anns, stories); }) == ErrorCode::Join);
}

TEST_CASE("authorship accuracy under the default mapping") {
  std::vector<Story> stories = {llm_story(1, "M", StrategyId::WP)};
  Story h;
  h.id = 2;
  h.authorship = Authorship::human(HumanTier::Novice);
  stories.push_back(h);
  // llm story: 1 correct (<=2), 3 wrong; human story: 5 correct, 3 wrong.
  std::vector<Annotation> anns = {rate(1, "a", 3, 1), rate(1, "b", 3, 3), rate(2, "a", 3, 5), rate(2, "b", 3, 3)};
  auto acc = authorship_accuracy(anns, stories);
  CHECK(acc.overall == doctest::Approx(0.5));
  CHECK(acc.n == 4);
}

TEST_CASE("pairwise significance excludes thin authors") {
  std::vector<Story> stories = {llm_story(1, "A", StrategyId::WP), llm_story(2, "B", StrategyId::WP),
                                llm_story(3, "C", StrategyId::WP)};
  std::vector<Annotation> anns = {rate(1, "x", 1), rate(1, "y", 2), rate(2, "x", 4), rate(2, "y", 5),
                                  rate(3, "x", 3)};
  auto m = pairwise_significance(anns, stories, RatingField::AUTH);
  CHECK(m.authors.size() == 2);
  CHECK(m.warnings.size() == 1);
  CHECK(m.at("A", "B").t == -m.at("B", "A").t);
}
