#include "robustmal/attacks.hpp"

#include <chrono>
#include <exception>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>

#include "robustmal/error.hpp"
#include "robustmal/features.hpp"
#include "robustmal/random.hpp"

namespace robustmal {

using nlohmann::json;

void AttackBudget::validate() const {
  if (max_steps < 0 || max_queries == 0 || wall_clock_limit < 0.0) {
    throw Error(ErrorCode::kInvalidConfig, "attack budget needs max_steps >= 0, max_queries >= 1, clock >= 0");
  }
}

void to_json(json& j, const AttackBudget& b) {
  j = json{{"max_steps", b.max_steps},
           {"max_queries", b.max_queries},
           {"wall_clock_limit", b.wall_clock_limit},
           {"seed", b.seed}};
}

void from_json(const json& j, AttackBudget& b) {
  const AttackBudget d;
  b.max_steps = j.value("max_steps", d.max_steps);
  b.max_queries = j.value("max_queries", d.max_queries);
  b.wall_clock_limit = j.value("wall_clock_limit", d.wall_clock_limit);
  b.seed = j.value("seed", d.seed);
  b.validate();
}

std::string_view strategy_name(AttackStrategy s) { return s == AttackStrategy::kGreedy ? "greedy" : "random"; }

AttackStrategy parse_strategy(std::string_view name) {
  if (name == "greedy") return AttackStrategy::kGreedy;
  if (name == "random") return AttackStrategy::kRandom;
  throw Error(ErrorCode::kInvalidConfig, "unknown attack strategy '" + std::string(name) + "'");
}

void to_json(json& j, const AttackResult& r) {
  json per = json::array();
  for (const auto& [name, ok] : r.per_strategy) per.push_back({{"strategy", name}, {"success", ok}});
  j = json{{"sample_id", r.sample_id},
           {"strategy", r.strategy},
           {"success", r.success},
           {"sequence", r.sequence},
           {"labels", r.labels},
           {"queries_used", r.queries_used},
           {"initial_score", r.initial_score},
           {"final_score", r.final_score},
           {"per_strategy", per}};
}

void from_json(const json& j, AttackResult& r) {
  r.sample_id = j.at("sample_id").get<std::string>();
  r.strategy = j.at("strategy").get<std::string>();
  r.success = j.at("success").get<bool>();
  r.sequence = j.at("sequence").get<std::vector<std::size_t>>();
  r.labels = j.at("labels").get<std::vector<std::string>>();
  r.queries_used = j.at("queries_used").get<std::size_t>();
  r.initial_score = j.at("initial_score").get<double>();
  r.final_score = j.at("final_score").get<double>();
  r.per_strategy.clear();
  for (const auto& e : j.at("per_strategy")) {
    r.per_strategy.emplace_back(e.at("strategy").get<std::string>(), e.at("success").get<bool>());
  }
}

double ScoreOracle::query(ByteSpan bytes) {
  ++queries_;
  return d_.score(features_of(bytes, mapping_));
}

namespace {

using Clock = std::chrono::steady_clock;

class Deadline {
 public:
  explicit Deadline(double seconds) : seconds_(seconds), start_(Clock::now()) {}
  bool expired() const {
    return seconds_ > 0.0 && std::chrono::duration<double>(Clock::now() - start_).count() >= seconds_;
  }

 private:
  double seconds_;
  Clock::time_point start_;
};

// nullopt when `t` does not apply to `bytes`.
std::optional<Bytes> try_apply(ByteSpan bytes, const Transformation& t) {
  try {
    return apply_transformation(bytes, t);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kNotApplicable || e.code() == ErrorCode::kMalformedPE) return std::nullopt;
    throw;
  }
}

AttackResult start(ScoreOracle& o, const ProgramArtifact& p, std::string_view strategy) {
  AttackResult r;
  r.sample_id = p.id;
  r.strategy = std::string(strategy);
  r.initial_score = o.query(p.bytes);
  r.final_score = r.initial_score;
  if (r.initial_score < o.threshold()) {
    throw Error(ErrorCode::kNotDetected, "sample " + p.id + " is not detected");
  }
  return r;
}

void finish(AttackResult& r, const ScoreOracle& o, const ThreatModel& m) {
  r.queries_used = o.queries();
  r.success = r.final_score < o.threshold();
  r.labels.clear();
  for (auto i : r.sequence) r.labels.push_back(m.transformations[i].label());
}

}  // namespace

AttackResult greedy_attack(const Detector& d, const ProgramArtifact& p, const ThreatModel& m, MappingId mapping,
                           const AttackBudget& b) {
  b.validate();
  ScoreOracle o(d, mapping);
  const Deadline deadline(b.wall_clock_limit);
  AttackResult r = start(o, p, "greedy");
  Bytes current = p.bytes;
  bool exhausted = false;
  for (int step = 0; step < b.max_steps && !exhausted; ++step) {
    std::optional<std::size_t> best;
    double best_score = r.final_score;
    Bytes best_bytes;
    for (std::size_t i = 0; i < m.transformations.size(); ++i) {
      auto next = try_apply(current, m.transformations[i]);
      if (!next) continue;
      if (o.queries() >= b.max_queries || deadline.expired()) {
        exhausted = true;
        break;
      }
      const double s = o.query(*next);
      if (s < best_score) {
        best = i;
        best_score = s;
        best_bytes = std::move(*next);
      }
    }
    if (!best) break;
    current = std::move(best_bytes);
    r.sequence.push_back(*best);
    r.final_score = best_score;
    if (r.final_score < o.threshold()) break;
  }
  finish(r, o, m);
  return r;
}

AttackResult random_attack(const Detector& d, const ProgramArtifact& p, const ThreatModel& m, MappingId mapping,
                           const AttackBudget& b) {
  b.validate();
  ScoreOracle o(d, mapping);
  const Deadline deadline(b.wall_clock_limit);
  AttackResult r = start(o, p, "random");
  Rng rng(b.seed ^ fnv1a64(p.id));
  auto budget_left = [&] { return o.queries() < b.max_queries && !deadline.expired(); };
  auto record = [&](const std::vector<std::size_t>& seq, double s) {
    if (s < r.final_score) {
      r.final_score = s;
      r.sequence = seq;
    }
    return s < o.threshold();
  };

  std::vector<std::size_t> order(m.transformations.size());
  std::iota(order.begin(), order.end(), 0);
  if (b.max_steps > 0) {
    // Coverage: every single transformation once.
    rng.shuffle(order);
    for (auto i : order) {
      auto next = try_apply(p.bytes, m.transformations[i]);
      if (!next) continue;
      if (!budget_left()) {
        finish(r, o, m);
        return r;
      }
      if (record({i}, o.query(*next))) {
        finish(r, o, m);
        return r;
      }
    }
    // Random walks from the original sample.
    while (budget_left()) {
      Bytes current = p.bytes;
      std::vector<std::size_t> seq;
      for (int step = 0; step < b.max_steps && budget_left(); ++step) {
        rng.shuffle(order);
        std::optional<Bytes> next;
        std::size_t chosen = 0;
        for (auto i : order) {
          next = try_apply(current, m.transformations[i]);
          if (next) {
            chosen = i;
            break;
          }
        }
        if (!next) break;
        current = std::move(*next);
        seq.push_back(chosen);
        if (record(seq, o.query(current))) {
          finish(r, o, m);
          return r;
        }
      }
      if (seq.empty()) break;
    }
  }
  finish(r, o, m);
  return r;
}

AttackResult run_attack(AttackStrategy s, const Detector& d, const ProgramArtifact& p, const ThreatModel& m,
                        MappingId mapping, const AttackBudget& b) {
  return s == AttackStrategy::kGreedy ? greedy_attack(d, p, m, mapping, b) : random_attack(d, p, m, mapping, b);
}

namespace {

// Suite entry for one sample; nullopt when it is not detected.
std::optional<AttackResult> attack_one(const Detector& d, const ProgramArtifact& p, const ThreatModel& m,
                                       MappingId mapping, const std::vector<AttackStrategy>& strategies,
                                       const AttackBudget& b) {
  if (d.score(features_of(p.bytes, mapping)) < d.threshold()) return std::nullopt;
  std::optional<AttackResult> best;
  std::size_t queries = 0;
  std::vector<std::pair<std::string, bool>> per;
  for (auto s : strategies) {
    if (queries >= b.max_queries) break;
    AttackBudget rest = b;
    rest.max_queries = b.max_queries - queries;
    AttackResult r = run_attack(s, d, p, m, mapping, rest);
    queries += r.queries_used;
    per.emplace_back(r.strategy, r.success);
    const bool better = !best || (r.success && !best->success) || (!best->success && r.final_score < best->final_score);
    if (better) best = std::move(r);
    if (best->success) break;
  }
  if (!best) {
    // No strategies: report the unattacked sample.
    AttackResult r;
    r.sample_id = p.id;
    r.initial_score = r.final_score = d.score(features_of(p.bytes, mapping));
    best = r;
  }
  best->queries_used = queries;
  best->per_strategy = std::move(per);
  return best;
}

}  // namespace

std::vector<AttackResult> attack_suite(const Detector& d, const std::vector<ProgramArtifact>& samples,
                                       const ThreatModel& m, MappingId mapping,
                                       const std::vector<AttackStrategy>& strategies, const AttackBudget& b) {
  b.validate();
  std::vector<std::optional<AttackResult>> slots(samples.size());
  std::vector<std::exception_ptr> errors(samples.size());
  const auto n = static_cast<long>(samples.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      slots[k] = attack_one(d, samples[k], m, mapping, strategies, b);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<AttackResult> out;
  for (auto& s : slots) {
    if (s) out.push_back(std::move(*s));
  }
  return out;
}

namespace serial {

std::vector<AttackResult> attack_suite(const Detector& d, const std::vector<ProgramArtifact>& samples,
                                       const ThreatModel& m, MappingId mapping,
                                       const std::vector<AttackStrategy>& strategies, const AttackBudget& b) {
  b.validate();
  std::vector<AttackResult> out;
  for (const auto& p : samples) {
    if (auto r = attack_one(d, p, m, mapping, strategies, b)) out.push_back(std::move(*r));
  }
  return out;
}

}  // namespace serial

Bytes replay_sequence(ByteSpan bytes, const ThreatModel& m, const std::vector<std::size_t>& sequence) {
  Bytes current(bytes.begin(), bytes.end());
  for (auto i : sequence) {
    if (i >= m.transformations.size()) throw Error(ErrorCode::kInvalidConfig, "sequence index out of range");
    current = apply_transformation(current, m.transformations[i]);
  }
  return current;
}

ReplayReport replay_attacks(const Detector& d, const std::vector<ProgramArtifact>& samples, const ThreatModel& m,
                            MappingId mapping, const std::vector<AttackResult>& results) {
  std::map<std::string, const ProgramArtifact*> by_id;
  for (const auto& s : samples) by_id[s.id] = &s;
  ReplayReport rep;
  for (const auto& r : results) {
    if (!r.success) continue;
    ++rep.successes;
    const auto it = by_id.find(r.sample_id);
    if (it == by_id.end()) {
      rep.failures.push_back(r.sample_id);
      continue;
    }
    try {
      const double s = d.score(features_of(replay_sequence(it->second->bytes, m, r.sequence), mapping));
      if (s == r.final_score && s < d.threshold()) {
        ++rep.verified;
      } else {
        rep.failures.push_back(r.sample_id);
      }
    } catch (const Error&) {
      rep.failures.push_back(r.sample_id);
    }
  }
  return rep;
}

void write_attack_jsonl(const std::filesystem::path& path, const std::vector<AttackResult>& results,
                        const std::string& config_digest) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  for (const auto& r : results) {
    json j = r;
    if (!config_digest.empty()) j["config_digest"] = config_digest;
    out << j.dump() << '\n';
  }
}

std::vector<AttackResult> read_attack_jsonl(const std::filesystem::path& path, std::string* config_digest) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "cannot open " + path.string());
  std::vector<AttackResult> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (config_digest != nullptr && j.contains("config_digest")) *config_digest = j["config_digest"].get<std::string>();
      out.push_back(j.get<AttackResult>());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kIntegrityError, path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace robustmal
