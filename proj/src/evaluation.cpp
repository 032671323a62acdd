#include "robustmal/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <limits>
#include <map>
#include <sstream>

#include "robustmal/digest.hpp"
#include "robustmal/error.hpp"

namespace robustmal {

using nlohmann::json;

// ---- robustness -----------------------------------------------------------------

RobustnessReport robustness(const Detector& d, const std::vector<ProgramArtifact>& malware, const ThreatModel& m,
                            MappingId mapping, const std::vector<AttackStrategy>& strategies,
                            const AttackBudget& budget) {
  if (malware.empty()) throw Error(ErrorCode::kInvalidConfig, "robustness needs at least one malware sample");
  RobustnessReport rep;
  rep.results = attack_suite(d, malware, m, mapping, strategies, budget);
  if (rep.results.empty()) throw Error(ErrorCode::kNoDetectedMalware, "the detector flags none of the malware");
  for (auto s : strategies) rep.evasions_by_strategy.emplace_back(std::string(strategy_name(s)), 0);
  rep.n_detected = rep.results.size();
  for (const auto& r : rep.results) {
    if (!r.success) continue;
    ++rep.n_evaded;
    for (const auto& [name, ok] : r.per_strategy) {
      if (!ok) continue;
      for (auto& [n, count] : rep.evasions_by_strategy) {
        if (n == name) ++count;
      }
    }
  }
  rep.robustness = 1.0 - static_cast<double>(rep.n_evaded) / static_cast<double>(rep.n_detected);
  return rep;
}

// ---- certification ---------------------------------------------------------------

std::string_view certificate_status_name(CertificateStatus s) {
  switch (s) {
    case CertificateStatus::kCertified: return "certified";
    case CertificateStatus::kCounterexample: return "counterexample";
    case CertificateStatus::kNotAttempted: return "not_attempted";
  }
  return "not_attempted";
}

void to_json(json& j, const CertifyOptions& o) { j = json{{"depth", o.depth}, {"node_cap", o.node_cap}}; }

void from_json(const json& j, CertifyOptions& o) {
  const CertifyOptions d;
  o.depth = j.value("depth", d.depth);
  o.node_cap = j.value("node_cap", d.node_cap);
  if (o.depth < 0 || o.node_cap == 0) throw Error(ErrorCode::kInvalidConfig, "certify needs depth >= 0, node_cap >= 1");
}

void to_json(json& j, const CertificateReport& r) {
  j = json{{"status", certificate_status_name(r.status)},
           {"method", r.method},
           {"detail", r.detail},
           {"n_deltas", r.n_deltas},
           {"delta_digest", r.delta_digest}};
  if (r.status == CertificateStatus::kCounterexample && !r.sample_id.empty()) {
    j["counterexample"] = json{{"sample_id", r.sample_id},
                               {"path", r.path},
                               {"labels", r.labels},
                               {"initial_score", r.initial_score},
                               {"final_score", r.final_score}};
  }
}

namespace {

struct Flip {
  std::vector<std::size_t> path;
  double initial = 0.0;
  double final = 0.0;
};

// First state in breadth-first order that the detector scores benign.
std::optional<Flip> find_flip(const Detector& d, const ProgramArtifact& p, const ThreatModel& m, MappingId mapping,
                              const CertifyOptions& o) {
  const auto states = reachable_set(p.bytes, m, mapping, o.depth, o.node_cap);
  const double initial = d.score(states.front().features);
  if (initial < d.threshold()) return std::nullopt;
  for (const auto& s : states) {
    const double v = d.score(s.features);
    if (v < d.threshold()) return Flip{s.path, initial, v};
  }
  return std::nullopt;
}

std::string describe_negative(std::size_t delta, std::size_t coord, double value, MappingId mapping) {
  const auto& names = feature_schema(mapping).names;
  std::ostringstream out;
  out << "delta " << delta << " has " << value << " on "
      << (coord < names.size() ? names[coord] : std::to_string(coord));
  return out.str();
}

}  // namespace

CertificateReport certify_detector(const Detector& d, const ThreatModel& m, MappingId mapping,
                                   const std::vector<ProgramArtifact>& samples, const CertifyOptions& options,
                                   const std::vector<std::vector<double>>& extra_deltas) {
  if (options.depth < 0) throw Error(ErrorCode::kInvalidConfig, "depth must be non-negative");
  CertificateReport rep;
  if (options.depth == 0) {
    rep.status = CertificateStatus::kCertified;
    rep.method = "depth_zero";
    rep.detail = "no transformation is applied at depth 0";
    return rep;
  }
  auto rows = delta_rows(collect_delta_set(m, samples, mapping));
  rows.insert(rows.end(), extra_deltas.begin(), extra_deltas.end());
  rep.n_deltas = rows.size();
  rep.delta_digest = delta_digest(rows);

  if (const auto* e = dynamic_cast<const ErdaltDetector*>(&d)) {
    const bool upper_ok = e->monotone_upper() && e->upper().all_weights_nonnegative();
    const auto c = certify_linear(e->effective_weights(), rows);
    if (upper_ok && c.certified) {
      rep.status = CertificateStatus::kCertified;
      rep.method = "erdalt_linear";
      rep.detail = "W_eff delta >= 0 for every delta and the upper network is monotone";
      return rep;
    }
    rep.detail = !upper_ok ? "upper network is not monotone"
                           : "row " + std::to_string(c.coordinate) + " of W_eff gives " + std::to_string(c.value) +
                                 " on delta " + std::to_string(c.delta_index);
  } else if (d.info().monotone_by_construction) {
    std::vector<std::size_t> coords;
    if (const auto* s = dynamic_cast<const SelectedDetector*>(&d)) {
      coords = s->selection().kept_indices;
    } else {
      for (std::size_t i = 0; i < d.info().input_dimension; ++i) coords.push_back(i);
    }
    bool ok = true;
    for (std::size_t k = 0; k < rows.size() && ok; ++k) {
      for (auto i : coords) {
        if (i < rows[k].size() && rows[k][i] < 0.0) {
          rep.detail = describe_negative(k, i, rows[k][i], mapping);
          ok = false;
          break;
        }
      }
    }
    if (ok) {
      rep.status = CertificateStatus::kCertified;
      rep.method = "monotone";
      rep.detail = "monotone detector and every delta is non-negative on its inputs";
      return rep;
    }
  }

  // Bounded search over the detected malicious samples.
  std::vector<const ProgramArtifact*> targets;
  for (const auto& s : samples) {
    if (s.label == 1) targets.push_back(&s);
  }
  std::vector<std::optional<Flip>> flips(targets.size());
  std::vector<std::exception_ptr> errors(targets.size());
  const auto n = static_cast<long>(targets.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      flips[k] = find_flip(d, *targets[k], m, mapping, options);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  rep.method = "bounded_search";
  const std::string prior = rep.detail;
  for (std::size_t k = 0; k < flips.size(); ++k) {
    if (!flips[k]) continue;
    rep.status = CertificateStatus::kCounterexample;
    rep.sample_id = targets[k]->id;
    rep.path = flips[k]->path;
    for (auto i : rep.path) rep.labels.push_back(m.transformations[i].label());
    rep.initial_score = flips[k]->initial;
    rep.final_score = flips[k]->final;
    rep.detail = "flip to benign after " + std::to_string(rep.path.size()) + " transformation(s)";
    if (!prior.empty()) rep.detail += "; " + prior;
    return rep;
  }
  rep.status = CertificateStatus::kCertified;
  rep.detail = "no flip within depth " + std::to_string(options.depth) + " from " + std::to_string(targets.size()) +
               " malicious sample(s)";
  if (!prior.empty()) rep.detail += "; " + prior;
  return rep;
}

std::vector<std::vector<double>> attack_path_deltas(const std::vector<AttackResult>& results,
                                                    const std::vector<ProgramArtifact>& samples,
                                                    const ThreatModel& m, MappingId mapping) {
  std::map<std::string, const ProgramArtifact*> by_id;
  for (const auto& s : samples) by_id[s.id] = &s;
  std::vector<std::vector<double>> out;
  for (const auto& r : results) {
    if (!r.success) continue;
    const auto it = by_id.find(r.sample_id);
    if (it == by_id.end()) throw Error(ErrorCode::kMissingArtifact, "no sample " + r.sample_id);
    Bytes current = it->second->bytes;
    auto prev = features_of(current, mapping);
    for (auto i : r.sequence) {
      current = apply_transformation(current, m.transformations.at(i));
      auto next = features_of(current, mapping);
      std::vector<double> delta(next.size());
      for (std::size_t c = 0; c < next.size(); ++c) delta[c] = next[c] - prev[c];
      out.push_back(std::move(delta));
      prev = std::move(next);
    }
  }
  return out;
}

// ---- models ------------------------------------------------------------------------

std::string_view protection_name(Protection p) {
  switch (p) {
    case Protection::kNone: return "none";
    case Protection::kPvSelect: return "pv_select";
    case Protection::kAdversarial: return "adversarial";
    case Protection::kErdalt: return "erdalt";
  }
  return "none";
}

Protection parse_protection(std::string_view name) {
  if (name == "none") return Protection::kNone;
  if (name == "pv_select") return Protection::kPvSelect;
  if (name == "adversarial") return Protection::kAdversarial;
  if (name == "erdalt") return Protection::kErdalt;
  throw Error(ErrorCode::kInvalidConfig, "unknown protection '" + std::string(name) + "'");
}

namespace {

const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names{"mlp", "mlp_monotone", "gbt", "gbt_monotone", "knn", "erdalt"};
  return names;
}

bool uses_erdalt(const ModelSpec& s) { return s.model == "erdalt" || s.protection == Protection::kErdalt; }

}  // namespace

void ModelSpec::validate() const {
  if (std::find(model_names().begin(), model_names().end(), model) == model_names().end()) {
    throw Error(ErrorCode::kInvalidConfig, "unknown model '" + model + "'");
  }
  if (protection == Protection::kErdalt && model != "mlp" && model != "erdalt") {
    throw Error(ErrorCode::kInvalidConfig, "erdalt protection applies to mlp rows only");
  }
  if (model == "erdalt" && protection != Protection::kNone && protection != Protection::kErdalt) {
    throw Error(ErrorCode::kInvalidConfig, "erdalt rows take no other protection");
  }
  if (knn_k == 0 || knn_k % 2 == 0) throw Error(ErrorCode::kInvalidConfig, "knn_k must be odd");
  erdalt.validate();
  if (budget) budget->validate();
}

void to_json(json& j, const ModelSpec& s) {
  j = json{{"name", s.name},
           {"model", s.model},
           {"mapping", mapping_name(s.mapping)},
           {"protection", protection_name(s.protection)},
           {"mlp", s.mlp},
           {"gbt", s.gbt},
           {"knn_k", s.knn_k},
           {"erdalt", s.erdalt}};
  if (s.budget) j["budget"] = *s.budget;
}

void from_json(const json& j, ModelSpec& s) {
  s = ModelSpec{};
  s.model = j.value("model", s.model);
  s.mapping = parse_mapping(j.value("mapping", std::string("manual")));
  s.protection = parse_protection(j.value("protection", std::string("none")));
  s.name = j.value("name", s.model + "/" + std::string(mapping_name(s.mapping)) + "/" +
                               std::string(protection_name(s.protection)));
  if (j.contains("mlp")) s.mlp = j["mlp"].get<MlpConfig>();
  if (j.contains("gbt")) s.gbt = j["gbt"].get<GbtConfig>();
  s.knn_k = j.value("knn_k", s.knn_k);
  if (j.contains("erdalt")) s.erdalt = j["erdalt"].get<ErdaltConfig>();
  if (j.contains("budget")) s.budget = j["budget"].get<AttackBudget>();
  s.validate();
}

std::unique_ptr<Detector> train_detector(const ModelSpec& spec, const std::vector<ProgramArtifact>& train,
                                         const ThreatModel& m, const TrainOptions& options) {
  spec.validate();
  if (!(options.val_fraction > 0.0 && options.val_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "val_fraction must lie in (0, 1)");
  }
  TrainingSet all = build_training_set(train, spec.mapping);
  if (uses_erdalt(spec)) {
    ErdaltConfig c = spec.erdalt;
    c.seed = options.seed;
    c.val_fraction = options.val_fraction;
    return train_erdalt(all, delta_rows(collect_delta_set(m, train, spec.mapping)), c);
  }

  std::optional<FeatureSelection> selection;
  if (spec.protection == Protection::kPvSelect) {
    selection = pv_select(collect_delta_set(m, train, spec.mapping));
    all = apply_selection(all, *selection);
  }
  const auto [fit_idx, val_idx] = validation_split(all.y, options.val_fraction, options.seed);
  const TrainingSet val = subset(all, val_idx);

  auto fit_model = [&](const TrainingSet& fit) -> std::unique_ptr<Detector> {
    std::unique_ptr<Detector> d;
    if (spec.model == "mlp" || spec.model == "mlp_monotone") {
      MlpConfig c = spec.mlp;
      c.seed = options.seed;
      c.monotone = spec.model == "mlp_monotone";
      d = train_mlp(fit, c);
    } else if (spec.model == "gbt" || spec.model == "gbt_monotone") {
      GbtConfig c = spec.gbt;
      c.seed = options.seed;
      c.monotone = spec.model == "gbt_monotone";
      if (c.monotone) c.increasing.clear();
      d = train_gbt(fit, c);
    } else {
      d = train_knn(fit, spec.knn_k);
    }
    calibrate_threshold(*d, val);
    if (!selection) return d;
    const double tau = d->threshold();
    auto wrapped = std::make_unique<SelectedDetector>(*selection, std::move(d));
    wrapped->set_threshold(tau);
    return wrapped;
  };

  TrainingSet fit = subset(all, fit_idx);
  auto d = fit_model(fit);
  if (spec.protection != Protection::kAdversarial) return d;

  std::vector<ProgramArtifact> fit_malware;
  for (auto i : fit_idx) {
    if (train[i].label == 1) fit_malware.push_back(train[i]);
  }
  AttackBudget budget = spec.budget.value_or(options.budget);
  budget.seed = options.seed;
  const auto results = attack_suite(*d, fit_malware, m, spec.mapping, options.strategies, budget);
  std::map<std::string, const ProgramArtifact*> by_id;
  for (const auto& p : fit_malware) by_id[p.id] = &p;
  std::vector<std::vector<double>> extra;
  for (const auto& r : results) {
    if (r.sequence.empty()) continue;
    auto v = features_of(replay_sequence(by_id.at(r.sample_id)->bytes, m, r.sequence), spec.mapping);
    extra.push_back(selection ? apply_selection(v, *selection) : std::move(v));
  }
  if (extra.empty()) return d;
  Matrix x(fit.size() + extra.size(), fit.x.cols());
  std::copy(fit.x.data().begin(), fit.x.data().end(), x.data().begin());
  for (std::size_t k = 0; k < extra.size(); ++k) std::copy(extra[k].begin(), extra[k].end(), x.row(fit.size() + k).begin());
  fit.x = std::move(x);
  fit.y.insert(fit.y.end(), extra.size(), 1);
  return fit_model(fit);
}

// ---- experiments ---------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (corpus_spec.has_value() == !corpus_path.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "corpus needs exactly one of 'spec' and 'path'");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "train_fraction must lie in (0, 1)");
  }
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw Error(ErrorCode::kInvalidConfig, "val_fraction must lie in (0, 1)");
  if (seeds.empty()) throw Error(ErrorCode::kInvalidConfig, "seeds must not be empty");
  if (strategies.empty()) throw Error(ErrorCode::kInvalidConfig, "strategies must not be empty");
  if (rows.empty()) throw Error(ErrorCode::kInvalidConfig, "rows must not be empty");
  budget.validate();
  threat_model.validate();
  for (const auto& r : rows) r.validate();
}

void to_json(json& j, const ExperimentConfig& c) {
  json corpus;
  if (c.corpus_spec) corpus["spec"] = *c.corpus_spec;
  if (!c.corpus_path.empty()) corpus["path"] = c.corpus_path;
  json strategies = json::array();
  for (auto s : c.strategies) strategies.push_back(strategy_name(s));
  j = json{{"corpus", corpus},
           {"split", {{"train_fraction", c.train_fraction}, {"val_fraction", c.val_fraction}}},
           {"seeds", c.seeds},
           {"budget", c.budget},
           {"strategies", strategies},
           {"certify", c.certify},
           {"threat_model", c.threat_model},
           {"rows", c.rows}};
}

void from_json(const json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  try {
    const json& corpus = j.at("corpus");
    if (corpus.contains("spec")) c.corpus_spec = corpus["spec"].get<SyntheticSpec>();
    if (corpus.contains("path")) c.corpus_path = corpus["path"].get<std::string>();
    if (j.contains("split")) {
      c.train_fraction = j["split"].value("train_fraction", c.train_fraction);
      c.val_fraction = j["split"].value("val_fraction", c.val_fraction);
    }
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("budget")) c.budget = j["budget"].get<AttackBudget>();
    if (j.contains("strategies")) {
      c.strategies.clear();
      for (const auto& s : j["strategies"]) c.strategies.push_back(parse_strategy(s.get<std::string>()));
    }
    if (j.contains("certify")) c.certify = j["certify"].get<CertifyOptions>();
    if (j.contains("threat_model")) {
      const auto& t = j["threat_model"];
      c.threat_model = t.is_string() ? load_threat_model(t.get<std::string>()) : t.get<ThreatModel>();
    }
    c.rows = j.at("rows").get<std::vector<ModelSpec>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("experiment config: ") + e.what());
  }
  c.validate();
}

std::string config_digest(const ExperimentConfig& c) { return sha256_hex(json(c).dump()); }

void to_json(json& j, const EvalRow& r) {
  json by_strategy = json::object();
  for (const auto& [name, count] : r.evasions_by_strategy) by_strategy[name] = count;
  j = json{{"name", r.name},
           {"model", r.model},
           {"mapping", r.mapping},
           {"protection", r.protection},
           {"seed", r.seed},
           {"input_dimension", r.input_dimension},
           {"roc_auc", r.roc_auc},
           {"robustness", r.robustness ? json(*r.robustness) : json(nullptr)},
           {"n_detected", r.n_detected},
           {"n_evaded", r.n_evaded},
           {"evasions_by_strategy", by_strategy},
           {"certificate", r.certificate},
           {"cross_check", r.cross_check}};
}

json EvalReport::to_json() const {
  json j{{"config_digest", config_digest}, {"rows", rows}};
  if (!timestamp.empty()) j["timestamp"] = timestamp;
  return j;
}

namespace {

bool is_bounded(const CertificateReport& c) { return c.method == "depth_zero" || c.method == "bounded_search"; }

std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::string EvalReport::table() const {
  std::ostringstream out;
  std::size_t w = 4;
  for (const auto& r : rows) w = std::max(w, r.name.size());
  w += 2;
  out << pad("row", w) << pad("seed", 6) << pad("mapping", 11) << pad("protection", 13) << pad("AUC", 8)
      << pad("robust", 8) << pad("evaded", 10) << "certificate\n";
  for (const auto& r : rows) {
    out << pad(r.name, w) << pad(std::to_string(r.seed), 6) << pad(r.mapping, 11) << pad(r.protection, 13)
        << pad(fixed(r.roc_auc, 4), 8) << pad(r.robustness ? fixed(*r.robustness, 3) : "null", 8)
        << pad(std::to_string(r.n_evaded) + "/" + std::to_string(r.n_detected), 10)
        << certificate_status_name(r.certificate.status) << " (" << r.certificate.method << ")\n";
  }
  // Means over seeds, rows in first-appearance order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<const EvalRow*>> groups;
  for (const auto& r : rows) {
    if (groups[r.name].empty()) order.push_back(r.name);
    groups[r.name].push_back(&r);
  }
  out << "\nmean over seeds\n" << pad("row", w) << pad("runs", 6) << pad("AUC", 8) << pad("robust", 8) << "certified\n";
  for (const auto& name : order) {
    const auto& g = groups[name];
    double auc = 0.0;
    double rob = 0.0;
    std::size_t n_rob = 0;
    std::size_t certified = 0;
    for (const auto* r : g) {
      auc += r->roc_auc;
      if (r->robustness) {
        rob += *r->robustness;
        ++n_rob;
      }
      certified += r->certificate.status == CertificateStatus::kCertified ? 1 : 0;
    }
    out << pad(name, w) << pad(std::to_string(g.size()), 6) << pad(fixed(auc / static_cast<double>(g.size()), 4), 8)
        << pad(n_rob ? fixed(rob / static_cast<double>(n_rob), 3) : "null", 8) << certified << "/" << g.size()
        << "\n";
  }
  return out.str();
}

EvalReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  EvalReport report;
  report.config_digest = config_digest(config);
  const ThreatModel& m = config.threat_model;
  std::optional<Dataset> loaded;
  if (!config.corpus_path.empty()) loaded = load_dataset(config.corpus_path);

  for (auto seed : config.seeds) {
    Dataset ds;
    if (loaded) {
      ds = *loaded;
    } else {
      SyntheticSpec spec = *config.corpus_spec;
      spec.seed = seed;
      ds = generate_corpus(spec);
    }
    const auto [train, test] = family_split(ds, config.train_fraction, seed);
    std::vector<ProgramArtifact> test_malware;
    for (const auto& a : test.artifacts) {
      if (a.label == 1) test_malware.push_back(a);
    }
    std::map<MappingId, TrainingSet> test_sets;

    for (const auto& spec : config.rows) {
      TrainOptions opts;
      opts.val_fraction = config.val_fraction;
      opts.seed = seed;
      opts.budget = spec.budget.value_or(config.budget);
      opts.budget.seed = seed;
      opts.strategies = config.strategies;
      const auto d = train_detector(spec, train.artifacts, m, opts);

      EvalRow row;
      row.name = spec.name;
      row.model = uses_erdalt(spec) ? "erdalt" : spec.model;
      row.mapping = std::string(mapping_name(spec.mapping));
      row.protection = std::string(protection_name(spec.protection));
      row.seed = seed;
      row.input_dimension = d->info().input_dimension;
      if (const auto* s = dynamic_cast<const SelectedDetector*>(d.get())) {
        row.input_dimension = s->selection().kept_indices.size();
      }
      auto it = test_sets.find(spec.mapping);
      if (it == test_sets.end()) it = test_sets.emplace(spec.mapping, build_training_set(test.artifacts, spec.mapping)).first;
      row.roc_auc = roc_auc(d->score_batch(it->second.x), it->second.y);

      std::vector<AttackResult> results;
      try {
        auto rob = robustness(*d, test_malware, m, spec.mapping, config.strategies, opts.budget);
        row.robustness = rob.robustness;
        row.n_detected = rob.n_detected;
        row.n_evaded = rob.n_evaded;
        row.evasions_by_strategy = std::move(rob.evasions_by_strategy);
        results = std::move(rob.results);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNoDetectedMalware) throw;
      }

      row.certificate = certify_detector(*d, m, spec.mapping, test.artifacts, config.certify);
      row.cross_check = "consistent";
      if (row.certificate.status == CertificateStatus::kCertified && row.n_evaded > 0) {
        std::size_t shortest = std::numeric_limits<std::size_t>::max();
        for (const auto& r : results) {
          if (r.success) shortest = std::min(shortest, r.sequence.size());
        }
        // A bounded search only speaks for paths up to the search depth.
        const auto contradicted = [&](const CertificateReport& c) {
          if (c.status != CertificateStatus::kCertified) return false;
          if (!is_bounded(c)) return true;
          return shortest <= static_cast<std::size_t>(config.certify.depth);
        };
        if (is_bounded(row.certificate)) {
          row.cross_check = "beyond_depth";
        } else {
          row.certificate = certify_detector(*d, m, spec.mapping, test.artifacts, config.certify,
                                             attack_path_deltas(results, test_malware, m, spec.mapping));
          row.cross_check = "recertified";
        }
        if (contradicted(row.certificate)) {
          throw Error(ErrorCode::kIntegrityError,
                      "row " + spec.name + " stays certified although an attack evaded it");
        }
      }
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

ExperimentConfig ablation_config(const json& config) {
  json base = config;
  const MappingId mapping = parse_mapping(config.value("mapping", std::string("composite")));
  ErdaltConfig erdalt;
  erdalt.margin = 0.0;
  erdalt.lambda3 = 1.0;
  if (config.contains("erdalt")) erdalt = config["erdalt"].get<ErdaltConfig>();
  MlpConfig mlp;
  mlp.hidden = erdalt.hidden;
  if (config.contains("mlp")) mlp = config["mlp"].get<MlpConfig>();

  ModelSpec baseline;
  baseline.name = "baseline";
  baseline.model = "mlp";
  baseline.mapping = mapping;
  baseline.mlp = mlp;
  ModelSpec linear = baseline;
  linear.name = "+linear";
  linear.model = "erdalt";
  linear.protection = Protection::kErdalt;
  linear.erdalt = erdalt;
  linear.erdalt.monotone_upper = false;
  linear.erdalt.repair = RepairMode::kOff;
  ModelSpec monotone = baseline;
  monotone.name = "+monotone";
  monotone.model = "mlp_monotone";
  ModelSpec full = linear;
  full.name = "full";
  full.erdalt = erdalt;

  base.erase("mapping");
  base.erase("mlp");
  base.erase("erdalt");
  base["rows"] = std::vector<ModelSpec>{baseline, linear, monotone, full};
  return base.get<ExperimentConfig>();
}

EvalReport ablation(const json& config) { return run_experiment(ablation_config(config)); }

double corpus_self_check(const SyntheticSpec& spec) {
  const auto [train, test] = family_split(generate_corpus(spec), 0.5, spec.seed);
  GbtConfig c;
  c.depth = 2;
  c.seed = spec.seed;
  const auto d = train_gbt(build_training_set(train.artifacts, MappingId::kManual), c);
  const auto t = build_training_set(test.artifacts, MappingId::kManual);
  return roc_auc(d->score_batch(t.x), t.y);
}

}  // namespace robustmal
