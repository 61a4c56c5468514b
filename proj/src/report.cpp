#include "psychdepth/report.hpp"

#include <cmath>
#include <cstdio>
#include <set>

#include "psychdepth/io.hpp"
#include "psychdepth/judge.hpp"

namespace psychdepth::report {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path resolve_path(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string fmt(double v, int digits = 4) {
  if (!std::isfinite(v)) return std::isnan(v) ? "NA" : (v > 0 ? "inf" : "-inf");
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string fmt(const std::optional<double>& v, int digits = 4) { return v ? fmt(*v, digits) : "NA"; }

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

// Per-story mean of each component.
std::map<std::int64_t, std::array<double, kNumComponents>> story_means(const std::vector<Annotation>& anns) {
  std::map<std::int64_t, std::vector<Annotation>> groups;
  for (const auto& a : anns) groups[a.story_id].push_back(a);
  std::map<std::int64_t, std::array<double, kNumComponents>> out;
  for (const auto& [id, g] : groups) out[id] = judge::consensus(g).components;
  return out;
}

std::optional<double> mean_of(const std::array<std::optional<double>, kNumComponents>& values) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

template <typename F>
void guarded(std::vector<std::string>& warnings, const std::string& what, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    warnings.push_back(what + ": " + e.what());
  }
}

}  // namespace

ReportSpec ReportSpec::from_json(const json& j, const fs::path& base) {
  ReportSpec s;
  try {
    s.stories = resolve_path(base, j.at("stories").get<std::string>());
    if (j.contains("human_annotations") && !j["human_annotations"].is_null()) {
      s.human_annotations = resolve_path(base, j["human_annotations"].get<std::string>());
    }
    for (const auto& jj : j.value("judges", json::array())) {
      if (jj.is_string()) {
        s.judges.push_back({resolve_path(base, jj.get<std::string>()), ""});
      } else {
        s.judges.push_back({resolve_path(base, jj.at("path").get<std::string>()), jj.value("label", "")});
      }
    }
    auto std_kind = j.value("std", "sample");
    if (std_kind != "sample" && std_kind != "population") {
      throw Error(ErrorCode::Validation, "std must be sample or population", {{"field", "std"}});
    }
    s.std_kind = std_kind == "sample" ? stats::StdKind::Sample : stats::StdKind::Population;
    if (j.contains("mapping")) {
      s.mapping.human_min = j["mapping"].value("human_min", s.mapping.human_min);
      s.mapping.llm_max = j["mapping"].value("llm_max", s.mapping.llm_max);
    }
    if (j.contains("model_params")) s.model_params = j["model_params"].get<std::map<std::string, double>>();
    if (j.contains("labels")) s.labels = resolve_path(base, j["labels"].get<std::string>());
    if (j.contains("labels_before_overrides")) {
      s.labels_before_overrides = resolve_path(base, j["labels_before_overrides"].get<std::string>());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("bad report spec: ") + e.what());
  }
  return s;
}

ReportSpec ReportSpec::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Parse, "report spec " + path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

Report build_report(const std::vector<Story>& stories, const std::vector<Annotation>& human,
                    const std::map<std::string, std::vector<Annotation>>& judges, const ReportSpec& spec,
                    const std::vector<themes::LabelRecord>* labels,
                    const std::vector<themes::LabelRecord>* labels_before) {
  Report r;
  auto& warn = r.warnings;

  // Agreement: persona agreement per judge, then the human raters.
  for (const auto& [label, anns] : judges) {
    std::vector<Annotation> mop;
    for (const auto& a : anns) {
      if (a.persona_id) mop.push_back(a);
    }
    if (mop.empty()) continue;
    AgreementRow row{label, {}, std::nullopt};
    for (auto c : kAllComponents) {
      guarded(warn, "agreement " + label + " " + std::string(to_string(c)),
              [&] { row.alpha[static_cast<std::size_t>(c)] = judge::persona_agreement(mop, c); });
    }
    row.average = mean_of(row.alpha);
    r.agreement.push_back(row);
  }
  if (!human.empty()) {
    AgreementRow row{"Human", {}, std::nullopt};
    for (auto c : kAllComponents) {
      guarded(warn, "agreement Human " + std::string(to_string(c)), [&] {
        row.alpha[static_cast<std::size_t>(c)] = stats::krippendorff_ordinal_alpha(pivot_ratings(human, c));
      });
    }
    row.average = mean_of(row.alpha);
    r.agreement.push_back(row);
  }

  // Correlations: Spearman between human and judge consensus labels.
  if (!human.empty()) {
    auto human_means = story_means(human);
    std::vector<std::array<double, kNumComponents>> base_rows, mop_rows;
    for (const auto& [label, anns] : judges) {
      std::vector<Annotation> zero, mop;
      for (const auto& a : anns) (a.persona_id ? mop : zero).push_back(a);
      std::optional<JudgeRow> zero_row;
      for (auto* set : {&zero, &mop}) {
        if (set->empty()) continue;
        JudgeRow row;
        row.judge = label;
        row.setting = set == &zero ? "zero-shot" : "MoP";
        auto judge_means = story_means(*set);
        std::array<std::vector<double>, kNumComponents> hx, jy;
        for (const auto& [id, jm] : judge_means) {
          auto it = human_means.find(id);
          if (it == human_means.end()) continue;
          ++row.stories;
          for (std::size_t c = 0; c < kNumComponents; ++c) {
            hx[c].push_back(it->second[c]);
            jy[c].push_back(jm[c]);
          }
        }
        std::array<std::optional<double>, kNumComponents> coeffs;
        for (std::size_t c = 0; c < kNumComponents; ++c) {
          guarded(warn, "correlation " + label + " " + row.setting + " " + std::string(to_string(kAllComponents[c])),
                  [&] {
                    row.correlations[c] = stats::spearman(hx[c], jy[c]);
                    coeffs[c] = row.correlations[c]->coefficient;
                  });
        }
        row.average = mean_of(coeffs);
        if (set == &zero) {
          zero_row = row;
        } else if (zero_row && zero_row->average && row.average) {
          guarded(warn, "MoP delta " + label,
                  [&] { row.mop_delta_percent = stats::mop_delta_percent(*zero_row->average, *row.average); });
          bool complete = true;
          std::array<double, kNumComponents> b{}, m{};
          for (std::size_t c = 0; c < kNumComponents; ++c) {
            if (!zero_row->correlations[c] || !row.correlations[c]) complete = false;
            else {
              b[c] = zero_row->correlations[c]->coefficient;
              m[c] = row.correlations[c]->coefficient;
            }
          }
          if (complete) {
            base_rows.push_back(b);
            mop_rows.push_back(m);
          }
        }
        r.correlations.push_back(row);
      }
    }
    if (!base_rows.empty()) {
      guarded(warn, "MoP delta row", [&] { r.correlation_delta = stats::mop_delta_row(base_rows, mop_rows); });
    }
  } else if (!judges.empty()) {
    warn.push_back("correlations: no human annotations to correlate against");
  }

  // Human-rating tables.
  if (human.empty()) {
    warn.push_back("author tables: no human annotations");
  } else {
    guarded(warn, "author summary", [&] { r.authors = stats::author_summary(human, stories, spec.std_kind); });
    guarded(warn, "strategy delta", [&] { r.strategy = stats::strategy_delta(human, stories); });
    guarded(warn, "authorship accuracy", [&] { r.accuracy = stats::authorship_accuracy(human, stories, spec.mapping); });

    std::map<std::int64_t, const Story*> by_id;
    for (const auto& s : stories) by_id[s.id] = &s;
    for (auto f : kAllFields) {
      std::map<std::string, std::vector<int>> per_author;
      for (const auto& a : human) {
        auto it = by_id.find(a.story_id);
        if (it != by_id.end()) per_author[author_class(it->second->authorship)].push_back(a.value(f));
      }
      for (const auto& [author, values] : per_author) {
        r.cdf[std::string(to_string(f))][author] = stats::cdf_points(values);
      }
      guarded(warn, "significance " + std::string(to_string(f)),
              [&] { r.significance.emplace(std::string(to_string(f)), stats::pairwise_significance(human, stories, f)); });
    }
    for (const auto& [name, sig] : r.significance) {
      for (const auto& w : sig.warnings) warn.push_back("significance " + name + ": " + w);
    }

    if (!spec.model_params.empty() && r.authors) {
      std::vector<double> params, depth;
      for (const auto& [model, p] : spec.model_params) {
        auto it = std::find(r.authors->authors.begin(), r.authors->authors.end(), model);
        if (it == r.authors->authors.end()) {
          warn.push_back("size vs depth: no ratings for " + model);
          continue;
        }
        double d = 0.0;
        for (auto c : kAllComponents) d += r.authors->at(model, field_of(c)).mean;
        d /= static_cast<double>(kNumComponents);
        params.push_back(p);
        depth.push_back(d);
        r.size_points.push_back({model, {p, d}});
      }
      guarded(warn, "size vs depth", [&] { r.size_vs_depth = stats::pearson(params, depth); });
    }
  }

  if (labels) {
    guarded(warn, "features", [&] { r.features = themes::feature_table(*labels, stories); });
  }
  if (labels_before) {
    guarded(warn, "features before overrides",
            [&] { r.features_before_overrides = themes::feature_table(*labels_before, stories); });
  }
  return r;
}

Report run_report(const ReportSpec& spec) {
  auto stories = ingest_stories(spec.stories);
  std::vector<Annotation> human;
  if (spec.human_annotations) human = ingest_annotations(*spec.human_annotations);
  std::map<std::string, std::vector<Annotation>> judges;
  for (const auto& src : spec.judges) {
    auto anns = ingest_annotations(src.path);
    for (auto& a : anns) {
      auto label = src.label.empty() ? a.rater_id : src.label;
      judges[label].push_back(a);
    }
  }
  std::optional<std::vector<themes::LabelRecord>> labels, before;
  if (spec.labels) labels = themes::read_labels(*spec.labels);
  if (spec.labels_before_overrides) before = themes::read_labels(*spec.labels_before_overrides);
  return build_report(stories, human, judges, spec, labels ? &*labels : nullptr, before ? &*before : nullptr);
}

// ---- output ----------------------------------------------------------------------

namespace {

json corr_json(const std::optional<stats::CorrelationResult>& c) {
  if (!c) return nullptr;
  return {{"coefficient", c->coefficient}, {"p_value", c->p_value}, {"n", c->n}, {"significant", c->significant}};
}

json feature_json(const themes::FeatureTable& t) {
  json j = {{"authors", t.authors}, {"stories_per_author", t.stories_per_author}, {"fractions", json::object()}};
  for (auto f : themes::kAllFeatures) j["fractions"][std::string(themes::to_string(f))] = t.fractions[static_cast<std::size_t>(f)];
  return j;
}

}  // namespace

json to_json(const Report& r) {
  json j = json::object();
  j["agreement"] = json::array();
  for (const auto& row : r.agreement) {
    json a = {{"rater", row.rater}, {"average", opt(row.average)}};
    for (auto c : kAllComponents) a[std::string(to_string(c))] = opt(row.alpha[static_cast<std::size_t>(c)]);
    j["agreement"].push_back(a);
  }
  j["correlations"] = json::array();
  for (const auto& row : r.correlations) {
    json c = {{"judge", row.judge},
              {"setting", row.setting},
              {"stories", row.stories},
              {"average", opt(row.average)},
              {"mop_delta_percent", opt(row.mop_delta_percent)}};
    for (auto k : kAllComponents) c[std::string(to_string(k))] = corr_json(row.correlations[static_cast<std::size_t>(k)]);
    j["correlations"].push_back(c);
  }
  if (r.correlation_delta) {
    json d = {{"average_percent", r.correlation_delta->average_percent}};
    for (auto c : kAllComponents) d[std::string(to_string(c))] = r.correlation_delta->component_percent[static_cast<std::size_t>(c)];
    j["correlation_delta"] = d;
  }
  if (r.authors) {
    json a = {{"std", r.authors->std_kind == stats::StdKind::Sample ? "sample" : "population"}, {"rows", json::array()}};
    for (std::size_t i = 0; i < r.authors->authors.size(); ++i) {
      json row = {{"author", r.authors->authors[i]}};
      for (auto f : kAllFields) {
        const auto& ms = r.authors->cells[i][static_cast<std::size_t>(f)];
        row[std::string(to_string(f))] = {{"mean", ms.mean}, {"std", ms.std}, {"n", ms.n}};
      }
      a["rows"].push_back(row);
    }
    j["authors"] = a;
  }
  if (r.strategy) {
    json s = {{"rows", json::array()}, {"overall", r.strategy->overall}};
    for (std::size_t m = 0; m < r.strategy->models.size(); ++m) {
      json row = {{"model", r.strategy->models[m]}, {"model_average", r.strategy->model_average[m]}};
      for (auto c : kAllComponents) row[std::string(to_string(c))] = r.strategy->deltas[m][static_cast<std::size_t>(c)];
      s["rows"].push_back(row);
    }
    json avg = json::object();
    for (auto c : kAllComponents) avg[std::string(to_string(c))] = r.strategy->component_average[static_cast<std::size_t>(c)];
    s["component_average"] = avg;
    j["strategy_delta"] = s;
  }
  if (r.accuracy) {
    j["accuracy"] = {{"overall", r.accuracy->overall},
                     {"n", r.accuracy->n},
                     {"per_author", r.accuracy->per_author},
                     {"per_author_n", r.accuracy->per_author_n}};
  }
  json cdf = json::object();
  for (const auto& [field, authors] : r.cdf) {
    for (const auto& [author, pts] : authors) {
      json arr = json::array();
      for (const auto& p : pts) arr.push_back({p.value, p.cumulative});
      cdf[field][author] = arr;
    }
  }
  j["cdf"] = cdf;
  json sig = json::object();
  for (const auto& [field, m] : r.significance) {
    json cells = json::array();
    for (std::size_t i = 0; i < m.authors.size(); ++i) {
      for (std::size_t k = 0; k < m.authors.size(); ++k) {
        const auto& c = m.cells[i][k];
        cells.push_back({{"row", m.authors[i]},
                         {"col", m.authors[k]},
                         {"t", std::isfinite(c.t) ? json(c.t) : json(fmt(c.t))},
                         {"df", c.df},
                         {"p", c.p}});
      }
    }
    sig[field] = {{"authors", m.authors}, {"cells", cells}};
  }
  j["significance"] = sig;
  if (r.size_vs_depth) {
    json pts = json::array();
    for (const auto& [model, pd] : r.size_points) pts.push_back({{"model", model}, {"params", pd.first}, {"depth", pd.second}});
    j["size_vs_depth"] = {{"pearson", corr_json(r.size_vs_depth)}, {"points", pts}};
  }
  if (r.features) j["features"] = feature_json(*r.features);
  if (r.features_before_overrides) j["features_before_overrides"] = feature_json(*r.features_before_overrides);
  j["warnings"] = r.warnings;
  return j;
}

std::vector<fs::path> write_report(const Report& r, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  auto emit = [&](const std::string& name, const std::vector<io::CsvRow>& rows) {
    auto p = out_dir / name;
    io::write_file_atomic(p, io::to_csv(rows));
    written.push_back(p);
  };

  {
    std::vector<io::CsvRow> rows = {{"rater", "AUTH", "EMP", "ENG", "PROV", "NCOM", "AVG"}};
    for (const auto& row : r.agreement) {
      io::CsvRow out = {row.rater};
      for (const auto& a : row.alpha) out.push_back(fmt(a, 4));
      out.push_back(fmt(row.average, 4));
      rows.push_back(out);
    }
    emit("table1_agreement.csv", rows);
  }
  {
    io::CsvRow header = {"judge", "setting"};
    for (auto c : kAllComponents) {
      header.push_back(std::string(to_string(c)));
      header.push_back(std::string(to_string(c)) + "_p");
    }
    header.insert(header.end(), {"average", "mop_delta_percent", "stories"});
    std::vector<io::CsvRow> rows = {header};
    for (const auto& row : r.correlations) {
      io::CsvRow out = {row.judge, row.setting};
      for (const auto& c : row.correlations) {
        out.push_back(c ? fmt(c->coefficient) : "NA");
        out.push_back(c ? fmt(c->p_value) : "NA");
      }
      out.push_back(fmt(row.average));
      out.push_back(fmt(row.mop_delta_percent, 2));
      out.push_back(std::to_string(row.stories));
      rows.push_back(out);
    }
    if (r.correlation_delta) {
      io::CsvRow out = {"+MoP delta %", ""};
      for (double v : r.correlation_delta->component_percent) {
        out.push_back(fmt(v, 2));
        out.push_back("");
      }
      out.push_back(fmt(r.correlation_delta->average_percent, 2));
      out.push_back("");
      out.push_back("");
      rows.push_back(out);
    }
    emit("table2_correlations.csv", rows);
  }
  if (r.authors) {
    io::CsvRow header = {"author"};
    for (auto f : kAllFields) {
      header.push_back(std::string(to_string(f)) + "_mean");
      header.push_back(std::string(to_string(f)) + "_std");
    }
    header.push_back("n");
    std::vector<io::CsvRow> rows = {header};
    for (std::size_t i = 0; i < r.authors->authors.size(); ++i) {
      io::CsvRow out = {r.authors->authors[i]};
      const auto& cells = r.authors->cells[i];
      for (const auto& ms : cells) {
        out.push_back(ms.n ? fmt(ms.mean, 2) : "NA");
        out.push_back(ms.n ? fmt(ms.std, 2) : "NA");
      }
      out.push_back(std::to_string(cells[0].n));
      rows.push_back(out);
    }
    emit("table3_authors.csv", rows);
  }
  if (r.strategy) {
    std::vector<io::CsvRow> rows = {{"model", "AUTH", "EMP", "ENG", "PROV", "NCOM", "model_average"}};
    for (std::size_t m = 0; m < r.strategy->models.size(); ++m) {
      io::CsvRow out = {r.strategy->models[m]};
      for (double v : r.strategy->deltas[m]) out.push_back(fmt(v, 2));
      out.push_back(fmt(r.strategy->model_average[m], 2));
      rows.push_back(out);
    }
    io::CsvRow avg = {"Component Average"};
    for (double v : r.strategy->component_average) avg.push_back(fmt(v, 2));
    avg.push_back(fmt(r.strategy->overall, 2));
    rows.push_back(avg);
    emit("table9_strategy.csv", rows);
  }
  if (r.accuracy) {
    std::vector<io::CsvRow> rows = {{"author", "n", "accuracy"}};
    for (const auto& [author, acc] : r.accuracy->per_author) {
      rows.push_back({author, std::to_string(r.accuracy->per_author_n.at(author)), fmt(acc)});
    }
    rows.push_back({"overall", std::to_string(r.accuracy->n), fmt(r.accuracy->overall)});
    emit("accuracy.csv", rows);
  }
  if (!r.cdf.empty()) {
    std::vector<io::CsvRow> rows = {{"field", "author", "value", "cumulative"}};
    for (const auto& [field, authors] : r.cdf) {
      for (const auto& [author, pts] : authors) {
        for (const auto& p : pts) rows.push_back({field, author, std::to_string(p.value), fmt(p.cumulative, 6)});
      }
    }
    emit("cdf.csv", rows);
  }
  if (!r.significance.empty()) {
    std::vector<io::CsvRow> rows = {{"field", "row", "col", "t", "df", "p"}};
    for (const auto& [field, m] : r.significance) {
      for (std::size_t i = 0; i < m.authors.size(); ++i) {
        for (std::size_t k = 0; k < m.authors.size(); ++k) {
          const auto& c = m.cells[i][k];
          rows.push_back({field, m.authors[i], m.authors[k], fmt(c.t, 6), fmt(c.df, 6), fmt(c.p, 6)});
        }
      }
    }
    emit("significance.csv", rows);
  }
  if (!r.size_points.empty()) {
    std::vector<io::CsvRow> rows = {{"model", "params_b", "mean_depth"}};
    for (const auto& [model, pd] : r.size_points) rows.push_back({model, fmt(pd.first, 2), fmt(pd.second, 4)});
    emit("size_vs_depth.csv", rows);
  }
  if (r.features) {
    auto p = out_dir / "table6_features.csv";
    io::write_file_atomic(p, themes::feature_table_csv(*r.features));
    written.push_back(p);
  }
  if (r.features_before_overrides) {
    auto p = out_dir / "table6_features_before_overrides.csv";
    io::write_file_atomic(p, themes::feature_table_csv(*r.features_before_overrides));
    written.push_back(p);
  }
  auto p = out_dir / "report.json";
  io::write_file_atomic(p, to_json(r).dump(2) + "\n");
  written.push_back(p);
  return written;
}

}  // namespace psychdepth::report
