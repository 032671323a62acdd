#include "robustmal/cli.hpp"

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <ostream>

#include "CLI11.hpp"
#include "robustmal/digest.hpp"
#include "robustmal/error.hpp"
#include "robustmal/io.hpp"
#include "robustmal/model_io.hpp"

namespace robustmal {

namespace fs = std::filesystem;
using nlohmann::json;

PipelineConfig parse_pipeline_config(json raw, std::optional<std::uint64_t> seed) {
  if (!raw.is_object()) throw Error(ErrorCode::kInvalidConfig, "config must be a JSON object");
  if (seed) {
    raw["seed"] = *seed;
    raw["seeds"] = {*seed};
  }
  PipelineConfig c;
  try {
    const json& corpus = raw.at("corpus");
    if (corpus.contains("spec")) c.corpus_spec = corpus["spec"].get<SyntheticSpec>();
    if (corpus.contains("path")) c.corpus_path = corpus["path"].get<std::string>();
    if (c.corpus_spec.has_value() == !c.corpus_path.empty()) {
      throw Error(ErrorCode::kInvalidConfig, "corpus needs exactly one of 'spec' and 'path'");
    }
    c.mapping = parse_mapping(raw.value("mapping", std::string("manual")));
    if (raw.contains("threat_model")) {
      const auto& t = raw["threat_model"];
      c.threat_model = t.is_string() ? load_threat_model(t.get<std::string>()) : t.get<ThreatModel>();
    }
    c.threat_model.validate();
    c.seed = raw.value("seed", c.seed);
    if (c.corpus_spec) c.corpus_spec->seed = c.seed;
    if (raw.contains("split")) {
      c.train_fraction = raw["split"].value("train_fraction", c.train_fraction);
      c.val_fraction = raw["split"].value("val_fraction", c.val_fraction);
    }
    if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0) || !(c.val_fraction > 0.0 && c.val_fraction < 1.0)) {
      throw Error(ErrorCode::kInvalidConfig, "split fractions must lie in (0, 1)");
    }
    json model = raw.value("model", json::object());
    if (!model.contains("mapping")) model["mapping"] = mapping_name(c.mapping);
    c.model = model.get<ModelSpec>();
    if (raw.contains("budget")) c.budget = raw["budget"].get<AttackBudget>();
    c.budget.seed = c.seed;
    if (raw.contains("strategies")) {
      c.strategies.clear();
      for (const auto& s : raw["strategies"]) c.strategies.push_back(parse_strategy(s.get<std::string>()));
      if (c.strategies.empty()) throw Error(ErrorCode::kInvalidConfig, "strategies must not be empty");
    }
    if (raw.contains("certify")) c.certify = raw["certify"].get<CertifyOptions>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("config: ") + e.what());
  }
  c.raw = std::move(raw);
  c.digest = sha256_hex(c.raw.dump());
  return c;
}

namespace {

struct Context {
  PipelineConfig config;
  fs::path out;
};

Dataset load_corpus(const PipelineConfig& c) {
  return c.corpus_spec ? generate_corpus(*c.corpus_spec) : load_dataset(c.corpus_path);
}

std::pair<Dataset, Dataset> split_corpus(const PipelineConfig& c) {
  return family_split(load_corpus(c), c.train_fraction, c.seed);
}

std::vector<ProgramArtifact> malware_of(const Dataset& ds) {
  std::vector<ProgramArtifact> out;
  for (const auto& a : ds.artifacts) {
    if (a.label == 1) out.push_back(a);
  }
  return out;
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---- artifact digests ----------------------------------------------------------

std::optional<std::string> digest_of_json(const fs::path& p) {
  if (!fs::exists(p)) return std::nullopt;
  const json j = read_json_file(p);
  if (!j.contains("config_digest")) throw Error(ErrorCode::kIntegrityError, p.string() + " has no config_digest");
  return j["config_digest"].get<std::string>();
}

// First-line "# config_digest: <hex>" of the CSV outputs.
std::optional<std::string> digest_of_csv(const fs::path& p) {
  if (!fs::exists(p)) return std::nullopt;
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  const std::string prefix = "# config_digest: ";
  if (line.rfind(prefix, 0) != 0) throw Error(ErrorCode::kIntegrityError, p.string() + " has no config_digest");
  return line.substr(prefix.size());
}

std::optional<std::string> digest_of_jsonl(const fs::path& p) {
  if (!fs::exists(p)) return std::nullopt;
  std::string d;
  read_attack_jsonl(p, &d);
  return d;
}

void require_digest(const fs::path& p, const std::optional<std::string>& found, const std::string& want) {
  if (!found) throw Error(ErrorCode::kMissingArtifact, p.string() + " does not exist");
  if (*found != want) {
    throw Error(ErrorCode::kIntegrityError, p.string() + " was produced by a different config (digest " + *found + ")");
  }
}

std::unique_ptr<Detector> load_model(const Context& ctx) {
  const fs::path p = ctx.out / "model.json";
  require_digest(p, digest_of_json(p), ctx.config.digest);
  return load_detector(read_json_file(p));
}

void write_model(const Context& ctx, const Detector& d) {
  json j = d.to_json();
  j["config_digest"] = ctx.config.digest;
  write_json_file(ctx.out / "model.json", j);
}

json summary(const Context& ctx, const std::string& command, const std::vector<fs::path>& outputs) {
  json files = json::array();
  for (const auto& p : outputs) files.push_back(p.string());
  return json{{"command", command}, {"config_digest", ctx.config.digest}, {"outputs", files}};
}

// ---- commands -------------------------------------------------------------------

json cmd_gen(const Context& ctx) {
  if (!ctx.config.corpus_spec) throw Error(ErrorCode::kInvalidConfig, "gen needs corpus.spec");
  const Dataset ds = generate_corpus(*ctx.config.corpus_spec);
  const fs::path dir = ctx.out / "corpus";
  fs::remove_all(dir);
  save_dataset(ds, dir, ctx.config.digest);
  auto s = summary(ctx, "gen", {dir});
  s["samples"] = ds.size();
  return s;
}

json cmd_extract(const Context& ctx) {
  const Dataset ds = load_corpus(ctx.config);
  const auto t = build_training_set(ds.artifacts, ctx.config.mapping);
  const fs::path p = ctx.out / "features.csv";
  fs::create_directories(ctx.out);
  std::ofstream f(p);
  if (!f) throw Error(ErrorCode::kIoError, "cannot write " + p.string());
  f << "# config_digest: " << ctx.config.digest << "\n# mapping: " << mapping_name(ctx.config.mapping) << "\n";
  f << "id,label,family";
  for (const auto& n : feature_schema(ctx.config.mapping).names) f << ',' << n;
  f << '\n';
  char buf[40];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& a = ds.artifacts[i];
    f << a.id << ',' << a.label << ',' << a.family;
    for (double v : t.x.row(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      f << ',' << buf;
    }
    f << '\n';
  }
  if (!f) throw Error(ErrorCode::kIoError, "cannot write " + p.string());
  auto s = summary(ctx, "extract", {p});
  s["rows"] = ds.size();
  return s;
}

std::vector<PerturbationVector> train_deltas(const Context& ctx) {
  const auto [train, test] = split_corpus(ctx.config);
  return collect_delta_set(ctx.config.threat_model, train.artifacts, ctx.config.mapping);
}

json cmd_delta(const Context& ctx) {
  const auto deltas = train_deltas(ctx);
  const fs::path p = ctx.out / "deltas.csv";
  fs::create_directories(ctx.out);
  write_delta_csv(p, deltas, ctx.config.mapping, ctx.config.digest);
  std::size_t negative = 0;
  for (const auto& d : deltas) {
    for (double v : d.values) negative += v < 0.0 ? 1 : 0;
  }
  auto s = summary(ctx, "delta", {p});
  s["deltas"] = deltas.size();
  s["negative_entries"] = negative;
  return s;
}

json cmd_select(const Context& ctx) {
  const auto sel = pv_select(train_deltas(ctx));
  const fs::path p = ctx.out / "selection.json";
  write_json_file(p, json{{"config_digest", ctx.config.digest}, {"selection", sel}});
  auto s = summary(ctx, "select", {p});
  s["kept"] = sel.kept_indices.size();
  s["dimension"] = sel.input_dimension;
  return s;
}

json cmd_train(const Context& ctx) {
  const auto [train, test] = split_corpus(ctx.config);
  TrainOptions o;
  o.val_fraction = ctx.config.val_fraction;
  o.seed = ctx.config.seed;
  o.budget = ctx.config.model.budget.value_or(ctx.config.budget);
  o.budget.seed = ctx.config.seed;
  o.strategies = ctx.config.strategies;
  const auto d = train_detector(ctx.config.model, train.artifacts, ctx.config.threat_model, o);
  write_model(ctx, *d);
  const auto t = build_training_set(test.artifacts, ctx.config.model.mapping);
  auto s = summary(ctx, "train", {ctx.out / "model.json"});
  s["model_kind"] = d->info().model_kind;
  s["threshold"] = d->threshold();
  s["test_auc"] = roc_auc(d->score_batch(t.x), t.y);
  return s;
}

json cmd_certify(const Context& ctx) {
  const auto d = load_model(ctx);
  const auto [train, test] = split_corpus(ctx.config);
  const auto rep = certify_detector(*d, ctx.config.threat_model, d->info().schema_id, test.artifacts,
                                    ctx.config.certify);
  const fs::path p = ctx.out / "certificate.json";
  write_json_file(p, json{{"config_digest", ctx.config.digest},
                          {"model_kind", d->info().model_kind},
                          {"certificate", rep}});
  auto s = summary(ctx, "certify", {p});
  s["status"] = certificate_status_name(rep.status);
  s["method"] = rep.method;
  return s;
}

json cmd_repair(const Context& ctx) {
  auto d = load_model(ctx);
  auto* e = dynamic_cast<ErdaltDetector*>(d.get());
  if (e == nullptr) throw Error(ErrorCode::kInvalidConfig, "repair needs an ERDALT model");
  const auto rows = delta_rows(train_deltas(ctx));
  e->repair(rows);
  write_model(ctx, *e);
  bool all_zeroed = true;
  for (std::size_t r = 0; r < e->w().rows() && all_zeroed; ++r) {
    for (double v : e->w().row(r)) all_zeroed = all_zeroed && v == 0.0;
  }
  const fs::path p = ctx.out / "repair.json";
  write_json_file(p, json{{"config_digest", ctx.config.digest},
                          {"zeroed_rows", e->repair_log()},
                          {"all_rows_zeroed", all_zeroed},
                          {"certified", e->certified_against().has_value()}});
  auto s = summary(ctx, "repair", {ctx.out / "model.json", p});
  s["zeroed_rows"] = e->repair_log().size();
  if (all_zeroed) s["warning"] = "every row of W is zero; the model is constant";
  return s;
}

json replay_report(const Context& ctx, const Detector& d, const std::vector<ProgramArtifact>& malware,
                   const std::vector<AttackResult>& results) {
  const auto rep = replay_attacks(d, malware, ctx.config.threat_model, d.info().schema_id, results);
  const fs::path p = ctx.out / "replay.json";
  write_json_file(p, json{{"config_digest", ctx.config.digest},
                          {"successes", rep.successes},
                          {"verified", rep.verified},
                          {"failures", rep.failures}});
  if (!rep.failures.empty()) {
    throw Error(ErrorCode::kIntegrityError, std::to_string(rep.failures.size()) + " attack(s) failed to replay");
  }
  return json{{"successes", rep.successes}, {"verified", rep.verified}};
}

json cmd_attack(const Context& ctx) {
  const auto d = load_model(ctx);
  const auto [train, test] = split_corpus(ctx.config);
  const auto malware = malware_of(test);
  const auto results =
      attack_suite(*d, malware, ctx.config.threat_model, d->info().schema_id, ctx.config.strategies, ctx.config.budget);
  const fs::path p = ctx.out / "attacks.jsonl";
  write_attack_jsonl(p, results, ctx.config.digest);
  auto s = summary(ctx, "attack", {p, ctx.out / "replay.json"});
  s["detected"] = results.size();
  s["replay"] = replay_report(ctx, *d, malware, results);
  return s;
}

json cmd_replay(const Context& ctx) {
  const auto d = load_model(ctx);
  const fs::path p = ctx.out / "attacks.jsonl";
  require_digest(p, digest_of_jsonl(p), ctx.config.digest);
  const auto results = read_attack_jsonl(p);
  const auto [train, test] = split_corpus(ctx.config);
  auto s = summary(ctx, "replay", {ctx.out / "replay.json"});
  s["replay"] = replay_report(ctx, *d, malware_of(test), results);
  return s;
}

// Every pipeline artifact already in `out` must carry the current digest.
void check_artifact_digests(const Context& ctx) {
  const std::vector<std::pair<fs::path, std::optional<std::string>>> found{
      {ctx.out / "corpus" / "manifest.json", digest_of_json(ctx.out / "corpus" / "manifest.json")},
      {ctx.out / "features.csv", digest_of_csv(ctx.out / "features.csv")},
      {ctx.out / "deltas.csv", digest_of_csv(ctx.out / "deltas.csv")},
      {ctx.out / "selection.json", digest_of_json(ctx.out / "selection.json")},
      {ctx.out / "model.json", digest_of_json(ctx.out / "model.json")},
      {ctx.out / "certificate.json", digest_of_json(ctx.out / "certificate.json")},
      {ctx.out / "repair.json", digest_of_json(ctx.out / "repair.json")},
      {ctx.out / "attacks.jsonl", digest_of_jsonl(ctx.out / "attacks.jsonl")},
      {ctx.out / "replay.json", digest_of_json(ctx.out / "replay.json")},
  };
  for (const auto& [path, digest] : found) {
    if (digest) require_digest(path, digest, ctx.config.digest);
  }
}

json experiment_json(const PipelineConfig& c) {
  json j = c.raw;
  if (!j.contains("seeds")) j["seeds"] = {c.seed};
  if (!j.contains("rows")) j["rows"] = {c.model};
  for (const char* k : {"seed", "mapping", "model", "mlp", "erdalt"}) j.erase(k);
  return j;
}

json write_report(const Context& ctx, const std::string& command, const std::string& stem,
                  const EvalReport& report) {
  EvalReport stamped = report;
  stamped.timestamp = utc_timestamp();
  json j = stamped.to_json();
  j["pipeline_digest"] = ctx.config.digest;
  const fs::path json_path = ctx.out / (stem + ".json");
  const fs::path text_path = ctx.out / (stem + ".txt");
  write_json_file(json_path, j);
  write_text_file(text_path, report.table());
  auto s = summary(ctx, command, {json_path, text_path});
  s["rows"] = report.rows.size();
  return s;
}

json cmd_eval(const Context& ctx) {
  check_artifact_digests(ctx);
  return write_report(ctx, "eval", "report", run_experiment(experiment_json(ctx.config).get<ExperimentConfig>()));
}

json cmd_ablation(const Context& ctx) {
  json j = ctx.config.raw;
  if (!j.contains("seeds")) j["seeds"] = {ctx.config.seed};
  j.erase("seed");
  j.erase("model");
  j.erase("rows");
  if (!ctx.config.raw.contains("mapping")) j["mapping"] = "composite";
  return write_report(ctx, "ablation", "ablation", ablation(j));
}

int fail(std::ostream& err, const std::string& code, const std::string& message, int exit_code) {
  err << json{{"error", code}, {"message", message}}.dump() << '\n';
  return exit_code;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Certified-robustness toolkit for static PE malware detectors"};
  app.require_subcommand(1);
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  int jobs = 0;

  using Command = json (*)(const Context&);
  const std::vector<std::tuple<std::string, std::string, Command>> commands{
      {"gen", "generate the synthetic corpus", cmd_gen},
      {"extract", "write the feature matrix as CSV", cmd_extract},
      {"delta", "collect perturbation vectors on the training split", cmd_delta},
      {"select", "PV feature selection", cmd_select},
      {"train", "train the configured model", cmd_train},
      {"certify", "certify the trained model", cmd_certify},
      {"repair", "zero the rows of an ERDALT W that break the certificate", cmd_repair},
      {"attack", "attack the held-out malware and verify every success", cmd_attack},
      {"replay", "re-verify saved attack results", cmd_replay},
      {"eval", "run the experiment table", cmd_eval},
      {"ablation", "run the four ablation arms", cmd_ablation},
  };
  Command chosen = nullptr;
  std::string chosen_name;
  for (const auto& [name, help, fn] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "pipeline config JSON")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_option("--jobs", jobs, "OpenMP threads (0 keeps the default)");
    sub->callback([&chosen, &chosen_name, f = fn, n = name] {
      chosen = f;
      chosen_name = n;
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    return fail(err, "InvalidConfig", e.what(), 2);
  }

  try {
    if (jobs < 0) throw Error(ErrorCode::kInvalidConfig, "--jobs must be non-negative");
    if (jobs > 0) omp_set_num_threads(jobs);
    json raw;
    try {
      raw = read_json_file(config_path);
    } catch (const Error& e) {
      throw Error(ErrorCode::kInvalidConfig, e.what());
    }
    Context ctx{parse_pipeline_config(std::move(raw), seed), fs::path(out_dir)};
    out << chosen(ctx).dump() << '\n';
    return 0;
  } catch (const Error& e) {
    return fail(err, std::string(error_code_name(e.code())), e.what(), e.is_validation() ? 2 : 3);
  } catch (const std::exception& e) {
    return fail(err, "Internal", e.what(), 3);
  }
}

}  // namespace robustmal
