#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "robustmal/artifact.hpp"
#include "robustmal/detectors.hpp"
#include "robustmal/threat_model.hpp"

namespace robustmal {

struct AttackBudget {
  int max_steps = 10;            // transformations per sequence
  std::size_t max_queries = 1000;  // score queries, including the initial one
  double wall_clock_limit = 60.0;  // seconds; 0 disables the clock
  std::uint64_t seed = 1;

  void validate() const;  // throws kInvalidConfig
};

void to_json(nlohmann::json& j, const AttackBudget& b);
void from_json(const nlohmann::json& j, AttackBudget& b);

enum class AttackStrategy { kGreedy, kRandom };

std::string_view strategy_name(AttackStrategy s);
AttackStrategy parse_strategy(std::string_view name);  // throws kInvalidConfig

struct AttackResult {
  std::string sample_id;
  std::string strategy;
  bool success = false;
  std::vector<std::size_t> sequence;  // indices into ThreatModel::transformations
  std::vector<std::string> labels;    // labels of `sequence`, for reading
  std::size_t queries_used = 0;
  double initial_score = 0.0;
  double final_score = 0.0;
  // Per-strategy outcome when produced by attack_suite, in strategy order.
  std::vector<std::pair<std::string, bool>> per_strategy;

  bool operator==(const AttackResult&) const = default;
};

void to_json(nlohmann::json& j, const AttackResult& r);
void from_json(const nlohmann::json& j, AttackResult& r);

// Read-only view handed to attacks: the score and the decision threshold,
// with query accounting. Attacks never see model parameters.
class ScoreOracle {
 public:
  ScoreOracle(const Detector& d, MappingId mapping) : d_(d), mapping_(mapping) {}

  double threshold() const { return d_.threshold(); }
  double query(ByteSpan bytes);
  std::size_t queries() const { return queries_; }

 private:
  const Detector& d_;
  MappingId mapping_;
  std::size_t queries_ = 0;
};

// Repeatedly applies the transformation with the largest strict score
// decrease (first in declaration order on ties) until evasion, budget
// exhaustion or no decreasing move. Throws kNotDetected when the sample is
// already classified benign.
AttackResult greedy_attack(const Detector& d, const ProgramArtifact& p, const ThreatModel& m,
                           MappingId mapping, const AttackBudget& b);

// First tries every applicable single transformation in a random order, then
// random walks of up to max_steps moves, restarting at the original sample
// on dead ends. Reports the lowest-scoring sequence seen. Deterministic given
// the budget seed and the sample id. Throws kNotDetected like greedy_attack.
AttackResult random_attack(const Detector& d, const ProgramArtifact& p, const ThreatModel& m,
                           MappingId mapping, const AttackBudget& b);

AttackResult run_attack(AttackStrategy s, const Detector& d, const ProgramArtifact& p, const ThreatModel& m,
                        MappingId mapping, const AttackBudget& b);

// Attacks every sample the detector flags as malicious with each strategy in
// turn, stopping at the first success. The strategies of one sample share
// b.max_queries. Undetected samples are left out.
// Samples run in parallel; the output order follows `samples`.
std::vector<AttackResult> attack_suite(const Detector& d, const std::vector<ProgramArtifact>& samples,
                                       const ThreatModel& m, MappingId mapping,
                                       const std::vector<AttackStrategy>& strategies, const AttackBudget& b);

namespace serial {
// Same as attack_suite, one sample at a time.
std::vector<AttackResult> attack_suite(const Detector& d, const std::vector<ProgramArtifact>& samples,
                                       const ThreatModel& m, MappingId mapping,
                                       const std::vector<AttackStrategy>& strategies, const AttackBudget& b);
}  // namespace serial

// Applies transformations `sequence` of `m` to `bytes` in order.
Bytes replay_sequence(ByteSpan bytes, const ThreatModel& m, const std::vector<std::size_t>& sequence);

struct ReplayReport {
  std::size_t successes = 0;
  std::size_t verified = 0;
  std::vector<std::string> failures;  // sample ids whose replay disagreed
};

// Re-applies every successful sequence and checks the score equals
// final_score exactly and falls below the threshold.
ReplayReport replay_attacks(const Detector& d, const std::vector<ProgramArtifact>& samples, const ThreatModel& m,
                            MappingId mapping, const std::vector<AttackResult>& results);

// One JSON object per line; every line carries `config_digest` when given.
void write_attack_jsonl(const std::filesystem::path& path, const std::vector<AttackResult>& results,
                        const std::string& config_digest = {});
std::vector<AttackResult> read_attack_jsonl(const std::filesystem::path& path, std::string* config_digest = nullptr);

}  // namespace robustmal
