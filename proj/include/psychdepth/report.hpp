#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "psychdepth/corpus.hpp"
#include "psychdepth/stats.hpp"
#include "psychdepth/themes.hpp"

namespace psychdepth::report {

struct JudgeSource {
  std::filesystem::path path;
  std::string label;  // row label; defaults to the rater id found in the file
};

// What the stats command reads. Relative paths resolve against the spec file.
struct ReportSpec {
  std::filesystem::path stories;
  std::optional<std::filesystem::path> human_annotations;
  std::vector<JudgeSource> judges;
  stats::StdKind std_kind = stats::StdKind::Sample;
  stats::HumannessMapping mapping;
  std::map<std::string, double> model_params;  // billions, for size vs depth
  std::optional<std::filesystem::path> labels;
  std::optional<std::filesystem::path> labels_before_overrides;

  static ReportSpec from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static ReportSpec load(const std::filesystem::path& path);
};

// One judge configuration: zero-shot (no persona) or MoP (persona annotations).
struct JudgeRow {
  std::string judge;
  std::string setting;  // "zero-shot" | "MoP"
  std::array<std::optional<stats::CorrelationResult>, kNumComponents> correlations;
  std::optional<double> average;
  std::optional<double> mop_delta_percent;
  std::size_t stories = 0;
};

struct AgreementRow {
  std::string rater;  // judge label or "Human"
  std::array<std::optional<double>, kNumComponents> alpha;
  std::optional<double> average;
};

struct Report {
  std::vector<AgreementRow> agreement;
  std::vector<JudgeRow> correlations;
  std::optional<stats::DeltaRow> correlation_delta;
  std::optional<stats::AuthorSummary> authors;
  std::optional<stats::StrategyDeltaTable> strategy;
  std::optional<stats::AccuracyReport> accuracy;
  // [field][author] -> cdf points over human ratings
  std::map<std::string, std::map<std::string, std::array<stats::CdfPoint, 5>>> cdf;
  std::map<std::string, stats::SignificanceMatrix> significance;
  std::optional<stats::CorrelationResult> size_vs_depth;
  std::vector<std::pair<std::string, std::pair<double, double>>> size_points;  // model -> (params, depth)
  std::optional<themes::FeatureTable> features;                   // after overrides
  std::optional<themes::FeatureTable> features_before_overrides;
  std::vector<std::string> warnings;
};

// Pure assembly; every table that cannot be computed from the inputs is left
// empty and explained in `warnings`.
Report build_report(const std::vector<Story>& stories, const std::vector<Annotation>& human,
                    const std::map<std::string, std::vector<Annotation>>& judges, const ReportSpec& spec,
                    const std::vector<themes::LabelRecord>* labels = nullptr,
                    const std::vector<themes::LabelRecord>* labels_before_overrides = nullptr);

Report run_report(const ReportSpec& spec);

// Writes table1_agreement.csv, table2_correlations.csv, table3_authors.csv,
// table9_strategy.csv, accuracy.csv, cdf.csv, significance.csv,
// size_vs_depth.csv, table6_features*.csv (when present) and report.json.
// Returns the written paths.
std::vector<std::filesystem::path> write_report(const Report& report, const std::filesystem::path& out_dir);

nlohmann::json to_json(const Report& report);

}  // namespace psychdepth::report
