#include "psychdepth/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include <boost/math/distributions/students_t.hpp>

#include "psychdepth/error.hpp"

namespace psychdepth::stats {

// ---- alpha -----------------------------------------------------------------

double krippendorff_ordinal_alpha(const RatingTable& table) {
  // Pairable values per unit.
  std::vector<std::vector<int>> units;
  std::vector<int> categories;
  for (std::size_t u = 0; u < table.num_units(); ++u) {
    std::vector<int> values;
    for (std::size_t r = 0; r < table.num_raters(); ++r) {
      if (auto v = table.cell(u, r)) values.push_back(*v);
    }
    if (values.size() < 2) continue;
    categories.insert(categories.end(), values.begin(), values.end());
    units.push_back(std::move(values));
  }
  if (units.empty()) {
    throw Error(ErrorCode::InsufficientData, "alpha needs at least one unit with two or more ratings");
  }
  std::sort(categories.begin(), categories.end());
  categories.erase(std::unique(categories.begin(), categories.end()), categories.end());
  const std::size_t k = categories.size();
  if (k < 2) {
    throw Error(ErrorCode::UndefinedAlpha,
                "alpha is undefined: every pairable rating is " + std::to_string(categories.front()),
                {{"category", categories.front()}});
  }
  auto index_of = [&](int v) {
    return static_cast<std::size_t>(std::lower_bound(categories.begin(), categories.end(), v) -
                                    categories.begin());
  };

  // Coincidence matrix: each ordered pair of values from different raters in
  // a unit of m values contributes 1/(m-1).
  std::vector<double> coincidence(k * k, 0.0);
  std::vector<double> counts(k);
  for (const auto& values : units) {
    std::fill(counts.begin(), counts.end(), 0.0);
    for (int v : values) counts[index_of(v)] += 1.0;
    const double weight = 1.0 / static_cast<double>(values.size() - 1);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0.0) continue;
      for (std::size_t d = 0; d < k; ++d) {
        const double pairs = counts[c] * (counts[d] - (c == d ? 1.0 : 0.0));
        coincidence[c * k + d] += pairs * weight;
      }
    }
  }

  std::vector<double> marginal(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t d = 0; d < k; ++d) marginal[c] += coincidence[c * k + d];
  }
  const double n = std::accumulate(marginal.begin(), marginal.end(), 0.0);

  double observed = 0.0;
  double expected = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    double between = marginal[c];  // running sum of marginals c..d
    for (std::size_t d = c + 1; d < k; ++d) {
      between += marginal[d];
      const double diff = between - (marginal[c] + marginal[d]) / 2.0;
      const double delta2 = diff * diff;
      observed += coincidence[c * k + d] * delta2;
      expected += marginal[c] * marginal[d] * delta2;
    }
  }
  expected /= (n - 1.0);
  return 1.0 - observed / expected;
}

// ---- correlation -------------------------------------------------------------

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t m = i; m <= j; ++m) ranks[order[m]] = rank;
    i = j + 1;
  }
  return ranks;
}

double correlation_p_value(double r, std::size_t n) {
  if (n < 3) throw Error(ErrorCode::Precondition, "correlation p-value needs n >= 3");
  if (std::abs(r) >= 1.0) return 0.0;
  const double df = static_cast<double>(n - 2);
  const double t = r * std::sqrt(df / (1.0 - r * r));
  boost::math::students_t dist(df);
  return std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))), 0.0, 1.0);
}

namespace {

void check_pair(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw Error(ErrorCode::Precondition, "correlation inputs differ in length",
                {{"x", x.size()}, {"y", y.size()}});
  }
  if (x.size() < 3) throw Error(ErrorCode::Precondition, "correlation needs at least 3 pairs");
}

double product_moment(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw Error(ErrorCode::UndefinedCorrelation, "correlation is undefined for a constant vector");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CorrelationResult finish(double r, double p, std::size_t n) {
  return {r, p, n, p < kSignificance};
}

}  // namespace

CorrelationResult pearson(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const double r = product_moment(x, y);
  return finish(r, correlation_p_value(r, x.size()), x.size());
}

CorrelationResult spearman(std::span<const double> x, std::span<const double> y, PValueMethod method) {
  check_pair(x, y);
  const auto rx = average_ranks(x);
  auto ry = average_ranks(y);
  const double rho = product_moment(rx, ry);
  if (method == PValueMethod::TApproximation) return finish(rho, correlation_p_value(rho, x.size()), x.size());

  if (x.size() >= 10) {
    throw Error(ErrorCode::Precondition, "exact permutation p-value is limited to n < 10");
  }
  std::sort(ry.begin(), ry.end());
  std::size_t total = 0;
  std::size_t extreme = 0;
  const double threshold = std::abs(rho) - 1e-12;
  do {
    ++total;
    if (std::abs(product_moment(rx, ry)) >= threshold) ++extreme;
  } while (std::next_permutation(ry.begin(), ry.end()));
  return finish(rho, static_cast<double>(extreme) / static_cast<double>(total), x.size());
}

// ---- t tests ---------------------------------------------------------------

namespace {

struct Moments {
  double mean;
  double var;  // sample variance
  double n;
};

Moments moments(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, ss / (n - 1.0), n};
}

}  // namespace

SignificanceCell welch_t(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw Error(ErrorCode::Precondition, "welch_t needs at least two values per group",
                {{"a", a.size()}, {"b", b.size()}});
  }
  const auto ma = moments(a);
  const auto mb = moments(b);
  const double va = ma.var / ma.n;
  const double vb = mb.var / mb.n;
  const double se2 = va + vb;
  const double diff = ma.mean - mb.mean;
  if (se2 == 0.0) {
    const double df = ma.n + mb.n - 2.0;
    if (diff == 0.0) return {0.0, df, 1.0};
    return {std::copysign(std::numeric_limits<double>::infinity(), diff), df, 0.0};
  }
  SignificanceCell cell;
  cell.t = diff / std::sqrt(se2);
  cell.df = se2 * se2 / (va * va / (ma.n - 1.0) + vb * vb / (mb.n - 1.0));
  boost::math::students_t dist(cell.df);
  cell.p = std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(cell.t))), 0.0, 1.0);
  return cell;
}

double mop_delta_percent(double baseline, double mop) {
  if (baseline == 0.0) throw Error(ErrorCode::Undefined, "delta percent is undefined for a zero baseline");
  return 100.0 * (mop - baseline) / baseline;
}

DeltaRow mop_delta_row(const std::vector<std::array<double, kNumComponents>>& baseline,
                       const std::vector<std::array<double, kNumComponents>>& mop) {
  if (baseline.empty() || baseline.size() != mop.size()) {
    throw Error(ErrorCode::Precondition, "delta row needs matching, non-empty baseline and MoP rows");
  }
  const double rows = static_cast<double>(baseline.size());
  DeltaRow out;
  double base_all = 0.0, mop_all = 0.0;
  for (std::size_t c = 0; c < kNumComponents; ++c) {
    double b = 0.0, m = 0.0;
    for (std::size_t r = 0; r < baseline.size(); ++r) {
      b += baseline[r][c];
      m += mop[r][c];
    }
    out.component_percent[c] = mop_delta_percent(b / rows, m / rows);
    base_all += b;
    mop_all += m;
  }
  out.average_percent = mop_delta_percent(base_all, mop_all);
  return out;
}

MeanStd mean_std(std::span<const double> values, StdKind kind) {
  if (values.empty()) return {};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  double denom = kind == StdKind::Sample ? n - 1.0 : n;
  return {mean, denom > 0.0 ? std::sqrt(ss / denom) : 0.0, values.size()};
}

// ---- per-author tables -------------------------------------------------------

namespace {

using StoryIndex = std::unordered_map<std::int64_t, const Story*>;

StoryIndex index_stories(const std::vector<Story>& stories) {
  StoryIndex idx;
  for (const auto& s : stories) idx[s.id] = &s;
  return idx;
}

const Story& resolve(const StoryIndex& idx, std::int64_t story_id) {
  auto it = idx.find(story_id);
  if (it == idx.end()) {
    throw Error(ErrorCode::Join, "annotation references unknown story " + std::to_string(story_id),
                {{"story_id", story_id}});
  }
  return *it->second;
}

std::size_t field_index(RatingField f) { return static_cast<std::size_t>(f); }

std::size_t position(const std::vector<std::string>& names, const std::string& name) {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw Error(ErrorCode::NotFound, "unknown author '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

}  // namespace

std::vector<std::string> author_order(const std::vector<Story>& stories) {
  std::vector<std::string> llm;
  bool tiers[3] = {false, false, false};
  for (const auto& s : stories) {
    if (s.authorship.kind == AuthorKind::Human) {
      tiers[static_cast<int>(*s.authorship.tier)] = true;
    } else if (std::find(llm.begin(), llm.end(), *s.authorship.model_id) == llm.end()) {
      llm.push_back(*s.authorship.model_id);
    }
  }
  for (auto t : {HumanTier::Novice, HumanTier::Intermediate, HumanTier::Advanced}) {
    if (tiers[static_cast<int>(t)]) llm.push_back(author_class(Authorship::human(t)));
  }
  return llm;
}

const MeanStd& AuthorSummary::at(const std::string& author, RatingField f) const {
  return cells[position(authors, author)][field_index(f)];
}

AuthorSummary author_summary(const std::vector<Annotation>& anns, const std::vector<Story>& stories,
                             StdKind kind) {
  const auto idx = index_stories(stories);
  AuthorSummary out;
  out.std_kind = kind;
  out.authors = author_order(stories);
  std::vector<std::array<std::vector<double>, 6>> values(out.authors.size());
  for (const auto& a : anns) {
    const auto& story = resolve(idx, a.story_id);
    auto row = position(out.authors, author_class(story.authorship));
    for (auto f : kAllFields) values[row][field_index(f)].push_back(a.value(f));
  }
  out.cells.resize(out.authors.size());
  for (std::size_t r = 0; r < out.authors.size(); ++r) {
    for (auto f : kAllFields) out.cells[r][field_index(f)] = mean_std(values[r][field_index(f)], kind);
  }
  return out;
}

StrategyDeltaTable strategy_delta(const std::vector<Annotation>& anns, const std::vector<Story>& stories) {
  const auto idx = index_stories(stories);
  StrategyDeltaTable out;
  for (const auto& name : author_order(stories)) {
    if (name.rfind("Human-", 0) != 0) out.models.push_back(name);
  }
  // sums[model][strategy][component], counts[model][strategy]
  std::vector<std::array<std::array<double, kNumComponents>, 2>> sums(out.models.size());
  std::vector<std::array<std::size_t, 2>> counts(out.models.size());
  for (auto& s : sums) s = {};
  for (auto& c : counts) c = {0, 0};
  for (const auto& a : anns) {
    const auto& story = resolve(idx, a.story_id);
    if (story.authorship.kind != AuthorKind::Llm) continue;
    auto m = position(out.models, *story.authorship.model_id);
    auto s = static_cast<std::size_t>(*story.authorship.strategy);
    for (auto c : kAllComponents) sums[m][s][static_cast<std::size_t>(c)] += a.rating(c);
    ++counts[m][s];
  }
  const double models = static_cast<double>(out.models.size());
  for (std::size_t m = 0; m < out.models.size(); ++m) {
    if (counts[m][0] == 0 || counts[m][1] == 0) {
      throw Error(ErrorCode::Coverage, "model " + out.models[m] + " lacks ratings for both strategies",
                  {{"model", out.models[m]}, {"WP", counts[m][0]}, {"PW", counts[m][1]}});
    }
    std::array<double, kNumComponents> row{};
    double total = 0.0;
    for (std::size_t c = 0; c < kNumComponents; ++c) {
      const double wp = sums[m][0][c] / static_cast<double>(counts[m][0]);
      const double pw = sums[m][1][c] / static_cast<double>(counts[m][1]);
      row[c] = (pw - wp) / wp;
      total += row[c];
      out.component_average[c] += row[c] / models;
    }
    out.deltas.push_back(row);
    out.model_average.push_back(total / static_cast<double>(kNumComponents));
    out.overall += total / static_cast<double>(kNumComponents) / models;
  }
  return out;
}

AccuracyReport authorship_accuracy(const std::vector<Annotation>& anns, const std::vector<Story>& stories,
                                   const HumannessMapping& mapping) {
  const auto idx = index_stories(stories);
  AccuracyReport out;
  std::map<std::string, std::size_t> correct;
  std::size_t total_correct = 0;
  for (const auto& a : anns) {
    const auto& story = resolve(idx, a.story_id);
    const bool is_human = story.authorship.kind == AuthorKind::Human;
    bool hit = false;
    if (a.humanness >= mapping.human_min) hit = is_human;
    else if (a.humanness <= mapping.llm_max) hit = !is_human;
    const auto name = author_class(story.authorship);
    ++out.per_author_n[name];
    if (hit) {
      ++correct[name];
      ++total_correct;
    }
    ++out.n;
  }
  out.overall = out.n ? static_cast<double>(total_correct) / static_cast<double>(out.n) : 0.0;
  for (const auto& [name, n] : out.per_author_n) {
    out.per_author[name] = static_cast<double>(correct[name]) / static_cast<double>(n);
  }
  return out;
}

std::array<CdfPoint, 5> cdf_points(std::span<const int> ratings) {
  if (ratings.empty()) throw Error(ErrorCode::Precondition, "cdf of an empty rating vector");
  std::array<std::size_t, 5> hist{};
  for (int r : ratings) {
    if (r < kLikertMin || r > kLikertMax) {
      throw Error(ErrorCode::Range, "cdf rating out of [1,5]: " + std::to_string(r));
    }
    ++hist[static_cast<std::size_t>(r - 1)];
  }
  std::array<CdfPoint, 5> out;
  std::size_t running = 0;
  for (std::size_t v = 0; v < 5; ++v) {
    running += hist[v];
    out[v] = {static_cast<int>(v + 1), static_cast<double>(running) / static_cast<double>(ratings.size())};
  }
  return out;
}

const SignificanceCell& SignificanceMatrix::at(const std::string& row, const std::string& col) const {
  return cells[position(authors, row)][position(authors, col)];
}

SignificanceMatrix pairwise_significance(const std::vector<Annotation>& anns,
                                         const std::vector<Story>& stories, RatingField field) {
  const auto idx = index_stories(stories);
  const auto order = author_order(stories);
  std::vector<std::vector<double>> values(order.size());
  for (const auto& a : anns) {
    const auto& story = resolve(idx, a.story_id);
    values[position(order, author_class(story.authorship))].push_back(a.value(field));
  }
  SignificanceMatrix out;
  std::vector<std::vector<double>> kept;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (values[i].size() < 2) {
      out.warnings.push_back("excluded " + order[i] + ": fewer than two " +
                             std::string(to_string(field)) + " ratings");
      continue;
    }
    out.authors.push_back(order[i]);
    kept.push_back(std::move(values[i]));
  }
  if (out.authors.size() < 2) {
    throw Error(ErrorCode::Precondition, "pairwise significance needs at least two author classes");
  }
  out.cells.assign(out.authors.size(), std::vector<SignificanceCell>(out.authors.size()));
  for (std::size_t i = 0; i < kept.size(); ++i) {
    for (std::size_t j = 0; j < kept.size(); ++j) out.cells[i][j] = welch_t(kept[i], kept[j]);
  }
  return out;
}

}  // namespace psychdepth::stats
