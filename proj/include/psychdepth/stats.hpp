#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psychdepth/corpus.hpp"

namespace psychdepth::stats {

inline constexpr double kSignificance = 0.05;

// ---- agreement -------------------------------------------------------------

// Krippendorff's alpha with the ordinal difference function, built from the
// coincidence matrix. Units with fewer than two ratings are not pairable and
// are dropped. Throws InsufficientData when nothing is pairable and
// UndefinedAlpha when every pairable value falls in one category.
double krippendorff_ordinal_alpha(const RatingTable& table);

// ---- correlation -----------------------------------------------------------

enum class PValueMethod { TApproximation, ExactPermutation };

struct CorrelationResult {
  double coefficient = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
  bool significant = false;
};

// Average ranks (1-based) with ties sharing the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

// Two-tailed p for a correlation coefficient via t = r*sqrt((n-2)/(1-r^2)).
double correlation_p_value(double r, std::size_t n);

CorrelationResult pearson(std::span<const double> x, std::span<const double> y);
// ExactPermutation enumerates all rank permutations and needs n < 10.
CorrelationResult spearman(std::span<const double> x, std::span<const double> y,
                           PValueMethod method = PValueMethod::TApproximation);

// ---- group comparison -----------------------------------------------------

struct SignificanceCell {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

// Welch's unequal-variance t-test, two-tailed.
SignificanceCell welch_t(std::span<const double> a, std::span<const double> b);

// 100 * (mop - baseline) / baseline. Throws Undefined for a zero baseline.
double mop_delta_percent(double baseline, double mop);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

enum class StdKind { Sample, Population };
MeanStd mean_std(std::span<const double> values, StdKind kind);

// Author rows ordered: llm classes by first appearance in `stories`, then human
// tiers Novice, Intermediate, Advanced.
std::vector<std::string> author_order(const std::vector<Story>& stories);

struct AuthorSummary {
  std::vector<std::string> authors;
  // cells[author][field], fields in kAllFields order (five components then HUM).
  std::vector<std::array<MeanStd, 6>> cells;
  StdKind std_kind = StdKind::Sample;

  const MeanStd& at(const std::string& author, RatingField f) const;
};

// Mean and std over every (story, rater) rating per author class. Throws Join
// when an annotation names an unknown story.
AuthorSummary author_summary(const std::vector<Annotation>& anns, const std::vector<Story>& stories,
                             StdKind kind = StdKind::Sample);

struct StrategyDeltaTable {
  std::vector<std::string> models;
  // Fractional change (PW - WP) / WP; 0.10 means +10%.
  std::vector<std::array<double, kNumComponents>> deltas;
  std::vector<double> model_average;
  std::array<double, kNumComponents> component_average{};
  double overall = 0.0;
};

// Throws Coverage when a model lacks ratings for either strategy.
StrategyDeltaTable strategy_delta(const std::vector<Annotation>& anns, const std::vector<Story>& stories);

struct HumannessMapping {
  int human_min = 4;  // humanness >= human_min predicts human
  int llm_max = 2;    // humanness <= llm_max predicts llm; values between count as incorrect
};

struct AccuracyReport {
  double overall = 0.0;
  std::size_t n = 0;
  std::map<std::string, double> per_author;
  std::map<std::string, std::size_t> per_author_n;
};

AccuracyReport authorship_accuracy(const std::vector<Annotation>& anns, const std::vector<Story>& stories,
                                   const HumannessMapping& mapping = {});

struct CdfPoint {
  int value = 0;
  double cumulative = 0.0;
};
std::array<CdfPoint, 5> cdf_points(std::span<const int> ratings);

struct SignificanceMatrix {
  std::vector<std::string> authors;
  std::vector<std::vector<SignificanceCell>> cells;  // cells[row][col] = welch_t(row, col)
  std::vector<std::string> warnings;

  const SignificanceCell& at(const std::string& row, const std::string& col) const;
};

// Authors with fewer than two ratings are excluded with a warning. Throws
// Precondition when fewer than two authors remain.
SignificanceMatrix pairwise_significance(const std::vector<Annotation>& anns,
                                         const std::vector<Story>& stories, RatingField field);

// Table-2 style bottom row: change of the column means, not the mean of changes.
struct DeltaRow {
  std::array<double, kNumComponents> component_percent{};
  double average_percent = 0.0;
};
DeltaRow mop_delta_row(const std::vector<std::array<double, kNumComponents>>& baseline,
                       const std::vector<std::array<double, kNumComponents>>& mop);

}  // namespace psychdepth::stats
