#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "robustmal/attacks.hpp"
#include "robustmal/corpus.hpp"
#include "robustmal/detectors.hpp"
#include "robustmal/erdalt.hpp"
#include "robustmal/metrics.hpp"
#include "robustmal/selection.hpp"
#include "robustmal/threat_model.hpp"

namespace robustmal {

// ---- robustness -----------------------------------------------------------------

struct RobustnessReport {
  std::optional<double> robustness;  // 1 - n_evaded / n_detected
  std::size_t n_detected = 0;
  std::size_t n_evaded = 0;
  // Successes credited to each strategy, in strategy order.
  std::vector<std::pair<std::string, std::size_t>> evasions_by_strategy;
  std::vector<AttackResult> results;
};

// Runs attack_suite over `malware`. Throws kInvalidConfig on an empty set and
// kNoDetectedMalware when the detector flags none of it.
RobustnessReport robustness(const Detector& d, const std::vector<ProgramArtifact>& malware, const ThreatModel& m,
                            MappingId mapping, const std::vector<AttackStrategy>& strategies,
                            const AttackBudget& budget);

// ---- certification ---------------------------------------------------------------

enum class CertificateStatus { kCertified, kCounterexample, kNotAttempted };

std::string_view certificate_status_name(CertificateStatus s);

struct CertifyOptions {
  int depth = 2;
  std::size_t node_cap = kDefaultNodeCap;
};

void to_json(nlohmann::json& j, const CertifyOptions& o);
void from_json(const nlohmann::json& j, CertifyOptions& o);

struct CertificateReport {
  CertificateStatus status = CertificateStatus::kNotAttempted;
  // depth_zero, erdalt_linear, monotone or bounded_search.
  std::string method;
  std::string detail;
  std::size_t n_deltas = 0;
  std::string delta_digest;
  // Set for counterexamples found by the bounded search.
  std::string sample_id;
  std::vector<std::size_t> path;
  std::vector<std::string> labels;
  double initial_score = 0.0;
  double final_score = 0.0;
};

void to_json(nlohmann::json& j, const CertificateReport& r);

// Certifies `d` against the threat model over `samples`:
//  - depth 0 is certified outright;
//  - an ERDALT model needs a non-negative upper network and W_eff delta >= 0
//    for every delta collected from `samples` (plus `extra_deltas`);
//  - a detector monotone by construction needs every delta coordinate it
//    reads to be non-negative;
//  - anything else, or a structural check that fails, gets a breadth-first
//    search from every detected malicious sample up to `depth` steps that
//    reports the first flip to benign.
// Throws kBudgetExceeded when a reachable set outgrows the node cap.
CertificateReport certify_detector(const Detector& d, const ThreatModel& m, MappingId mapping,
                                   const std::vector<ProgramArtifact>& samples, const CertifyOptions& options,
                                   const std::vector<std::vector<double>>& extra_deltas = {});

// Per-step feature differences along every successful attack sequence.
std::vector<std::vector<double>> attack_path_deltas(const std::vector<AttackResult>& results,
                                                    const std::vector<ProgramArtifact>& samples,
                                                    const ThreatModel& m, MappingId mapping);

// ---- models ------------------------------------------------------------------------

enum class Protection { kNone, kPvSelect, kAdversarial, kErdalt };

std::string_view protection_name(Protection p);
Protection parse_protection(std::string_view name);  // throws kInvalidConfig

// One row of an experiment: what to train and how to protect it.
struct ModelSpec {
  std::string name;
  std::string model = "mlp";  // mlp, mlp_monotone, gbt, gbt_monotone, knn, erdalt
  MappingId mapping = MappingId::kManual;
  Protection protection = Protection::kNone;
  MlpConfig mlp;
  GbtConfig gbt;
  std::size_t knn_k = 5;
  ErdaltConfig erdalt;
  std::optional<AttackBudget> budget;  // overrides the experiment budget

  void validate() const;  // throws kInvalidConfig
};

void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);

struct TrainOptions {
  double val_fraction = 0.2;
  std::uint64_t seed = 1;
  // Used by adversarial training to produce the augmentation set.
  AttackBudget budget;
  std::vector<AttackStrategy> strategies{AttackStrategy::kGreedy, AttackStrategy::kRandom};
};

// Trains `spec` on `train` and sets its threshold on a stratified validation
// split. Model seeds are replaced by options.seed. pv_select wraps the model
// in a SelectedDetector; adversarial retrains once on the fit rows plus the
// final feature vectors of attacks on the training malware, labeled 1.
std::unique_ptr<Detector> train_detector(const ModelSpec& spec, const std::vector<ProgramArtifact>& train,
                                         const ThreatModel& m, const TrainOptions& options);

// ---- experiments ---------------------------------------------------------------------

struct ExperimentConfig {
  // Exactly one corpus source: a generator spec (its seed is replaced by each
  // experiment seed) or a dataset directory.
  std::optional<SyntheticSpec> corpus_spec;
  std::string corpus_path;
  double train_fraction = 0.5;
  double val_fraction = 0.2;
  std::vector<std::uint64_t> seeds{1};
  AttackBudget budget;
  std::vector<AttackStrategy> strategies{AttackStrategy::kGreedy, AttackStrategy::kRandom};
  CertifyOptions certify;
  // JSON: an inline object, a path to one, or absent for the default model.
  ThreatModel threat_model = default_threat_model();
  std::vector<ModelSpec> rows;

  void validate() const;  // throws kInvalidConfig
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

// SHA-256 of the canonical JSON form.
std::string config_digest(const ExperimentConfig& c);

struct EvalRow {
  std::string name;
  std::string model;
  std::string mapping;
  std::string protection;
  std::uint64_t seed = 0;
  std::size_t input_dimension = 0;
  double roc_auc = 0.0;
  std::optional<double> robustness;  // null when nothing was detected
  std::size_t n_detected = 0;
  std::size_t n_evaded = 0;
  std::vector<std::pair<std::string, std::size_t>> evasions_by_strategy;
  CertificateReport certificate;
  // "consistent"; "recertified" when a structural certificate met an attack
  // success and was recomputed with the attack-path deltas; "beyond_depth"
  // when a bounded certificate met only successes longer than its depth.
  std::string cross_check;
};

void to_json(nlohmann::json& j, const EvalRow& r);

struct EvalReport {
  std::string config_digest;
  std::string timestamp;  // left out of the digest; empty omits it
  std::vector<EvalRow> rows;

  nlohmann::json to_json() const;
  // Plain-text table, one line per row, then per-name means over seeds.
  std::string table() const;
};

// For each seed: builds the corpus, splits it by family, then for each row
// trains, measures AUC on the held-out part, attacks its malware and
// certifies the model over the held-out samples.
EvalReport run_experiment(const ExperimentConfig& config);

// The four ablation arms on one mapping (composite unless the config says
// otherwise): baseline MLP, ERDALT with an unconstrained upper network and no
// repair (+linear), monotone MLP (+monotone) and full ERDALT. Reads corpus,
// split, seeds, budget, strategies, certify, mapping, mlp and erdalt.
ExperimentConfig ablation_config(const nlohmann::json& config);
EvalReport ablation(const nlohmann::json& config);

// Held-out AUC of a depth-2 GBT on manual features, trained on half the
// families of a corpus drawn from `spec`.
double corpus_self_check(const SyntheticSpec& spec);

}  // namespace robustmal
