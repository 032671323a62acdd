#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "robustmal/detectors.hpp"

namespace robustmal {

enum class RepairMode { kOff, kZeroRows };

struct ErdaltConfig {
  double lambda1 = 1.0;
  double lambda2 = 10.0;
  double lambda3 = 0.01;
  double margin = 0.01;
  int epochs = 200;
  int min_epochs = 20;
  int patience = 10;  // epochs without a validation AUC gain before stopping
  double val_fraction = 0.2;
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  double weight_decay = 1e-4;  // on the upper network only
  std::size_t delta_batch = 64;  // deltas sampled per step for the hinge; 0 uses all
  std::vector<std::size_t> hidden = {16};
  bool monotone_upper = true;
  RepairMode repair = RepairMode::kZeroRows;
  int refit_epochs = 100;  // upper-network epochs after a repair that zeroed rows
  std::uint64_t seed = 1;

  void validate() const;  // throws kInvalidConfig
};

void to_json(nlohmann::json& j, const ErdaltConfig& c);
void from_json(const nlohmann::json& j, ErdaltConfig& c);

// Linear layer W followed by an upper network, both acting on standardized
// inputs: score(v) = upper(W (v - mean) / scale). The layer seen by a raw
// perturbation is W_eff = W diag(1 / scale), and robustness needs
// W_eff delta >= 0 for every delta.
class ErdaltDetector : public Detector {
 public:
  ErdaltDetector(Scaler scaler, Matrix w, MlpNet upper, MappingId schema, bool monotone_upper);

  double score(std::span<const double> v) const override;
  std::vector<double> score_batch(const Matrix& x) const override;
  nlohmann::json parameters() const override;
  static std::unique_ptr<ErdaltDetector> from_parameters(const nlohmann::json& p, MappingId schema);

  const Matrix& w() const { return w_; }
  const Scaler& scaler() const { return scaler_; }
  const MlpNet& upper() const { return upper_; }
  bool monotone_upper() const { return monotone_upper_; }
  Matrix effective_weights() const;

  // Replaces W; clears any certificate.
  void set_w(Matrix w);

  const std::optional<std::string>& certified_against() const { return certified_against_; }
  const std::vector<std::size_t>& repair_log() const { return repair_log_; }

  // Certifies effective_weights() against `deltas` with eps = 0 and records
  // the delta digest on success. Returns whether it certified.
  bool certify(const std::vector<std::vector<double>>& deltas);
  // Zeroes every row of W that some delta drives negative, then certifies.
  void repair(const std::vector<std::vector<double>>& deltas);
  void set_repair_log(std::vector<std::size_t> rows) { repair_log_ = std::move(rows); }

 private:
  Matrix hidden_input(const Matrix& x) const;

  Scaler scaler_;
  Matrix w_;
  MlpNet upper_;
  bool monotone_upper_;
  std::optional<std::string> certified_against_;
  std::vector<std::size_t> repair_log_;
};

struct ErdaltLoss {
  double l1 = 0.0;
  double l2 = 0.0;
  double l3 = 0.0;
  double total = 0.0;
};

// Loss terms on a batch (raw features) and a delta set (raw perturbations).
// Throws kEmptyDeltaSet on an empty delta set.
ErdaltLoss erdalt_loss(const ErdaltDetector& model, const Matrix& x, const std::vector<int>& y,
                       const std::vector<std::vector<double>>& deltas, const ErdaltConfig& config);

// W starts at the identity; upper weights are projected onto [0, inf) after
// every step when monotone_upper is set. The best validation-AUC snapshot is
// kept, then the repair mode is applied. If rows were zeroed the upper network
// is retrained for refit_epochs with W fixed. The threshold is picked on the
// validation rows.
std::unique_ptr<ErdaltDetector> train_erdalt(const TrainingSet& train,
                                             const std::vector<std::vector<double>>& deltas,
                                             const ErdaltConfig& config);

struct LinearCertificate {
  bool certified = true;
  // Worst (most negative) entry over all deltas and rows; set when some
  // entry falls below -eps. Ties keep the first (delta, row) pair.
  std::size_t delta_index = 0;
  std::size_t coordinate = 0;
  double value = 0.0;
  std::vector<double> delta;
};

LinearCertificate certify_linear(const Matrix& w, const std::vector<std::vector<double>>& deltas,
                                 double eps = 0.0);

struct RepairResult {
  Matrix w;
  std::vector<std::size_t> zeroed_rows;
  bool all_rows_zeroed = false;  // the model becomes constant
};

RepairResult repair_linear(const Matrix& w, const std::vector<std::vector<double>>& deltas);

}  // namespace robustmal
