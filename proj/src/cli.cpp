#include "psychdepth/cli.hpp"

#include <csignal>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "psychdepth/assets.hpp"
#include "psychdepth/io.hpp"
#include "psychdepth/judge.hpp"
#include "psychdepth/report.hpp"
#include "psychdepth/storygen.hpp"
#include "psychdepth/study.hpp"
#include "psychdepth/themes.hpp"

#ifndef PSYCHDEPTH_VERSION
#define PSYCHDEPTH_VERSION "dev"
#endif

namespace psychdepth {

using nlohmann::json;
namespace fs = std::filesystem;

std::string version() { return PSYCHDEPTH_VERSION; }

json make_run_record(const std::string& command, const std::vector<fs::path>& inputs, const json& seed,
                     const json& extra) {
  json in = json::array();
  for (const auto& p : inputs) {
    in.push_back({{"path", p.string()}, {"sha256", io::sha256_hex(io::read_file(p))}});
  }
  json assets = json::object();
  for (const auto& name : prompt_asset_names()) {
    const auto& a = prompt_asset(name);
    assets[name] = {{"version", a.version()}, {"status", a.status()}, {"sha256", io::sha256_hex(a.body)}};
  }
  json j = {{"command", command}, {"version", version()}, {"inputs", in}, {"seed", seed}, {"prompt_assets", assets}};
  for (const auto& [k, v] : extra.items()) j[k] = v;
  return j;
}

namespace {

json load_json(const fs::path& path) {
  try {
    return json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Parse, path.string() + ": " + e.what(), {{"path", path.string()}});
  }
}

fs::path relative_to(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

void write_json(const fs::path& path, const json& j) { io::write_file_atomic(path, j.dump(2) + "\n"); }

// Provider plumbing shared by the commands that talk to models.
struct ProviderFlags {
  std::string providers;
  std::string replay_log;
  std::string replay_source;

  void add(CLI::App* cmd) {
    cmd->add_option("--providers", providers, "providers file")->required();
    cmd->add_option("--replay-log", replay_log, "append every exchange to this log");
    cmd->add_option("--replay-source", replay_source, "serve every request from this log instead of the network");
  }

  std::unique_ptr<llm::ProviderRegistry> registry(std::vector<fs::path>& inputs) const {
    inputs.push_back(providers);
    auto reg = std::make_unique<llm::ProviderRegistry>(llm::load_providers(providers));
    if (!replay_source.empty()) {
      inputs.push_back(replay_source);
      reg->set_replay_source(replay_source);
    }
    if (!replay_log.empty()) reg->set_replay_log(std::make_shared<llm::ReplayLog>(replay_log));
    return reg;
  }
};

std::atomic<bool> g_stop{false};
study::StudyServer* g_server = nullptr;

void handle_signal(int) {
  g_stop = true;
  if (g_server) g_server->stop();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Psychological Depth Scale study harness"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);
  std::string out_dir;

  // generate
  auto* gen = app.add_subcommand("generate", "generate stories over a model x strategy x premise x sample grid");
  std::string gen_manifest, gen_premises;
  std::optional<std::uint64_t> gen_seed;
  ProviderFlags gen_pf;
  gen->add_option("--manifest", gen_manifest, "generation manifest (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--premises", gen_premises, "premises.jsonl (overrides the manifest)");
  gen->add_option("--seed", gen_seed, "override the manifest seed");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen_pf.add(gen);

  // judge
  auto* jud = app.add_subcommand("judge", "rate stories with an LLM judge (zero-shot or mixture of personas)");
  std::string jud_manifest, jud_stories;
  ProviderFlags jud_pf;
  std::optional<std::uint64_t> jud_seed;
  jud->add_option("--manifest", jud_manifest, "judge manifest (JSON)")->required()->check(CLI::ExistingFile);
  jud->add_option("--stories", jud_stories, "stories.jsonl")->required()->check(CLI::ExistingFile);
  jud->add_option("--seed", jud_seed, "recorded in the run record");
  jud->add_option("--out", out_dir, "output directory")->required();
  jud_pf.add(jud);

  // stats
  auto* sta = app.add_subcommand("stats", "compute agreement, correlation and author tables");
  std::string sta_manifest;
  sta->add_option("--manifest", sta_manifest, "report spec (JSON)")->required()->check(CLI::ExistingFile);
  sta->add_option("--out", out_dir, "output directory")->required();

  // themes
  auto* thm = app.add_subcommand("themes", "classify authorship justifications into features");
  std::string thm_manifest, thm_annotations, thm_stories, thm_overrides;
  ProviderFlags thm_pf;
  thm->add_option("--manifest", thm_manifest, "themes manifest (JSON)")->required()->check(CLI::ExistingFile);
  thm->add_option("--annotations", thm_annotations, "annotations with justifications")->required()->check(CLI::ExistingFile);
  thm->add_option("--stories", thm_stories, "stories.jsonl")->required()->check(CLI::ExistingFile);
  thm->add_option("--overrides", thm_overrides, "reviewed labels replacing model labels")->check(CLI::ExistingFile);
  thm->add_option("--out", out_dir, "output directory")->required();
  thm_pf.add(thm);

  // sample
  auto* sam = app.add_subcommand("sample", "stratified sample of stories for a human study");
  std::string sam_stories;
  std::size_t sam_target = 0;
  std::uint64_t sam_seed = 0;
  sam->add_option("--stories", sam_stories, "stories.jsonl")->required()->check(CLI::ExistingFile);
  sam->add_option("--target", sam_target, "number of stories")->required();
  sam->add_option("--seed", sam_seed, "sampling seed")->required();
  sam->add_option("--out", out_dir, "output directory")->required();

  // serve
  auto* srv = app.add_subcommand("serve", "run the annotation collection service");
  std::string srv_study, srv_stories, srv_premises, srv_host = "127.0.0.1", srv_id = "study";
  std::vector<std::string> srv_raters;
  std::uint64_t srv_seed = 0;
  int srv_port = 8080;
  bool srv_open = false;
  srv->add_option("--study", srv_study, "study directory")->required();
  srv->add_option("--stories", srv_stories, "create the study from these stories")->check(CLI::ExistingFile);
  srv->add_option("--premises", srv_premises, "premises for a new study")->check(CLI::ExistingFile);
  srv->add_option("--raters", srv_raters, "rater ids for a new study")->delimiter(',');
  srv->add_option("--seed", srv_seed, "story order seed for a new study");
  srv->add_option("--study-id", srv_id, "study id for a new study");
  srv->add_flag("--unblinded", srv_open, "show authorship to raters (never for real studies)");
  srv->add_option("--host", srv_host);
  srv->add_option("--port", srv_port);

  // export
  auto* exp = app.add_subcommand("export", "write the human annotations collected by a study");
  std::string exp_study;
  exp->add_option("--study", exp_study, "study directory")->required()->check(CLI::ExistingDirectory);
  exp->add_option("--out", out_dir, "output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code;
  }

  try {
    if (*gen) {
      fs::path mpath(gen_manifest);
      auto mj = load_json(mpath);
      auto manifest = storygen::manifest_from_json(mj);
      if (gen_seed) manifest.seed = *gen_seed;
      fs::path premises_path = !gen_premises.empty() ? fs::path(gen_premises)
                               : mj.contains("premises") ? relative_to(mpath.parent_path(), mj["premises"].get<std::string>())
                                                         : throw Error(ErrorCode::Config, "no premises file: pass --premises or set \"premises\" in the manifest");
      std::vector<fs::path> inputs = {mpath, premises_path};
      auto registry = gen_pf.registry(inputs);
      auto premises = ingest_premises(premises_path);
      auto run = storygen::run_generation(*registry, premises, manifest);
      fs::create_directories(out_dir);
      write_stories(fs::path(out_dir) / "stories.jsonl", run.stories);
      io::write_file_atomic(fs::path(out_dir) / "retries.csv", storygen::retry_table_csv(run.retry_table));
      write_json(fs::path(out_dir) / "run_record.json",
                 make_run_record("generate", inputs, manifest.seed,
                                 {{"manifest", storygen::to_json(manifest)}, {"stories", run.stories.size()}}));
      out << "generated " << run.stories.size() << " stories -> " << (fs::path(out_dir) / "stories.jsonl").string()
          << "\n";
    } else if (*jud) {
      auto manifest = judge::judge_manifest_from_json(load_json(jud_manifest));
      std::vector<fs::path> inputs = {jud_manifest, jud_stories};
      auto registry = jud_pf.registry(inputs);
      auto stories = ingest_stories(jud_stories);
      auto run = judge::run_judging(*registry, stories, manifest);
      fs::create_directories(out_dir);
      write_annotations_jsonl(fs::path(out_dir) / "annotations.jsonl", run.annotations);
      json personas = json::array();
      for (const auto& p : run.personas) {
        personas.push_back({{"id", p.id}, {"component_focus", to_string(p.component_focus)}, {"system_text", p.system_text}});
      }
      write_json(fs::path(out_dir) / "personas.json", personas);
      write_json(fs::path(out_dir) / "run_record.json",
                 make_run_record("judge", inputs, jud_seed ? json(*jud_seed) : json(nullptr),
                                 {{"provider", manifest.provider_id},
                                  {"model_id", manifest.model_id},
                                  {"persona_set", manifest.persona_set},
                                  {"instructions_version", run.instructions_version},
                                  {"annotations", run.annotations.size()}}));
      out << "wrote " << run.annotations.size() << " annotations -> "
          << (fs::path(out_dir) / "annotations.jsonl").string() << "\n";
    } else if (*sta) {
      auto spec = report::ReportSpec::load(sta_manifest);
      std::vector<fs::path> inputs = {sta_manifest, spec.stories};
      if (spec.human_annotations) inputs.push_back(*spec.human_annotations);
      for (const auto& j : spec.judges) inputs.push_back(j.path);
      if (spec.labels) inputs.push_back(*spec.labels);
      auto rep = report::run_report(spec);
      auto written = report::write_report(rep, out_dir);
      write_json(fs::path(out_dir) / "run_record.json", make_run_record("stats", inputs, nullptr));
      for (const auto& w : rep.warnings) err << "warning: " << w << "\n";
      out << "wrote " << written.size() << " report files -> " << out_dir << "\n";
    } else if (*thm) {
      auto mj = load_json(thm_manifest);
      std::string provider, model;
      int workers = 0;
      try {
        provider = mj.at("provider").get<std::string>();
        model = mj.value("model_id", "");
        workers = mj.value("workers", 0);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::Parse, std::string("bad themes manifest: ") + e.what());
      }
      std::vector<fs::path> inputs = {thm_manifest, thm_annotations, thm_stories};
      auto registry = thm_pf.registry(inputs);
      auto client = registry->client(provider, model);
      auto anns = ingest_annotations(thm_annotations);
      auto stories = ingest_stories(thm_stories);
      auto labels = themes::classify_annotations(client, anns, workers > 0 ? workers : client.config().max_concurrent);
      fs::create_directories(out_dir);
      fs::path od(out_dir);
      themes::write_labels(od / "labels_model.jsonl", labels);
      io::write_file_atomic(od / "table6_features_model.csv",
                            themes::feature_table_csv(themes::feature_table(labels, stories)));
      auto final_labels = labels;
      if (!thm_overrides.empty()) {
        inputs.push_back(thm_overrides);
        final_labels = themes::apply_overrides(labels, themes::read_labels(thm_overrides));
      }
      themes::write_labels(od / "labels.jsonl", final_labels);
      io::write_file_atomic(od / "table6_features.csv",
                            themes::feature_table_csv(themes::feature_table(final_labels, stories)));
      write_json(od / "run_record.json",
                 make_run_record("themes", inputs, nullptr, {{"justifications", labels.size()}}));
      out << "labeled " << labels.size() << " justifications -> " << (od / "labels.jsonl").string() << "\n";
    } else if (*sam) {
      auto stories = ingest_stories(sam_stories);
      auto sample = stratified_sample(stories, sam_target, sam_seed);
      fs::create_directories(out_dir);
      write_stories(fs::path(out_dir) / "sample.jsonl", sample);
      write_json(fs::path(out_dir) / "run_record.json",
                 make_run_record("sample", {sam_stories}, sam_seed, {{"target", sam_target}}));
      out << "sampled " << sample.size() << " stories -> " << (fs::path(out_dir) / "sample.jsonl").string() << "\n";
    } else if (*exp) {
      auto svc = study::StudyService::open(exp_study);
      auto anns = svc->annotations();
      fs::create_directories(out_dir);
      write_annotations_jsonl(fs::path(out_dir) / "human_annotations.jsonl", anns);
      write_annotations_csv(fs::path(out_dir) / "human_annotations.csv", anns);
      write_json(fs::path(out_dir) / "progress.json", svc->progress());
      out << "exported " << anns.size() << " annotations -> "
          << (fs::path(out_dir) / "human_annotations.jsonl").string() << "\n";
    } else if (*srv) {
      std::unique_ptr<study::StudyService> svc;
      if (!srv_stories.empty()) {
        if (srv_premises.empty() || srv_raters.empty()) {
          throw Error(ErrorCode::Config, "a new study needs --stories, --premises and --raters");
        }
        auto stories = ingest_stories(srv_stories);
        auto plan = study::make_plan(srv_id, srv_raters, stories, srv_seed, !srv_open);
        svc = study::StudyService::create(srv_study, plan, stories, ingest_premises(srv_premises));
      } else {
        svc = study::StudyService::open(srv_study);
      }
      study::StudyServer server(*svc);
      g_server = &server;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      out << "serving study " << svc->plan().study_id << " on http://" << srv_host << ":" << srv_port << "\n"
          << std::flush;
      bool ok = server.listen(srv_host, srv_port);
      g_server = nullptr;
      if (!ok && !g_stop) throw Error(ErrorCode::Io, "cannot listen on " + srv_host + ":" + std::to_string(srv_port));
    }
    return 0;
  } catch (const Error& e) {
    auto record = e.to_json();
    err << record.dump() << "\n";
    if (!out_dir.empty()) {
      try {
        fs::create_directories(out_dir);
        write_json(fs::path(out_dir) / "error.json", record);
      } catch (...) {
      }
    }
    return 2;
  } catch (const std::exception& e) {
    err << json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return 3;
  }
}

}  // namespace psychdepth
