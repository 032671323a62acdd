#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "robustmal/artifact.hpp"
#include "robustmal/features.hpp"
#include "robustmal/kernels.hpp"

namespace robustmal {

inline constexpr int kModelFormatVersion = 1;

// Labelled feature matrix, one row per sample.
struct TrainingSet {
  Matrix x;
  std::vector<int> y;
  MappingId schema_id = MappingId::kManual;

  std::size_t size() const { return y.size(); }
};

// Extracts features for every artifact (parallel over samples). Throws the
// first parse error in sample order.
TrainingSet build_training_set(const std::vector<ProgramArtifact>& artifacts, MappingId mapping);

// Rows `idx` of `t`, in that order.
TrainingSet subset(const TrainingSet& t, const std::vector<std::size_t>& idx);

// Stratified deterministic split into (fit, validation) index lists.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> validation_split(
    const std::vector<int>& y, double val_fraction, std::uint64_t seed);

// Throws kDegenerateDataset unless both classes are present.
void require_two_classes(const std::vector<int>& y);

struct DetectorInfo {
  std::string model_kind;
  MappingId schema_id = MappingId::kManual;
  bool monotone_by_construction = false;
  std::size_t input_dimension = 0;
};

// A scoring function with a decision threshold: malicious iff score >= tau.
class Detector {
 public:
  virtual ~Detector() = default;

  virtual double score(std::span<const double> v) const = 0;
  // Scores every row; implementations may use batched kernels.
  virtual std::vector<double> score_batch(const Matrix& x) const;

  double threshold() const { return threshold_; }
  void set_threshold(double tau) { threshold_ = tau; }
  bool is_malicious(std::span<const double> v) const { return score(v) >= threshold_; }

  const DetectorInfo& info() const { return info_; }

  // Full versioned record: {format_version, model_kind, schema_id, threshold, parameters}.
  nlohmann::json to_json() const;
  virtual nlohmann::json parameters() const = 0;

 protected:
  void check_dimension(std::span<const double> v) const;

  DetectorInfo info_;
  double threshold_ = 0.0;
};

// Positive per-feature standardization x' = (x - mean) / scale. Scales are
// strictly positive, so the map is increasing in every coordinate.
struct Scaler {
  std::vector<double> mean;
  std::vector<double> scale;

  static Scaler fit(const Matrix& x);
  static Scaler identity(std::size_t dim);
  void apply_row(std::span<const double> in, std::span<double> out) const;
  Matrix apply(const Matrix& x) const;
  nlohmann::json to_json() const;
  static Scaler from_json(const nlohmann::json& j);
};

// ---- MLP -------------------------------------------------------------------

struct MlpConfig {
  std::vector<std::size_t> hidden = {16};
  bool monotone = false;
  int epochs = 200;
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
};

void to_json(nlohmann::json& j, const MlpConfig& c);
void from_json(const nlohmann::json& j, MlpConfig& c);

// Fully connected network: tanh hidden layers and a single linear output
// logit. Layer l maps in_l -> out_l with weights stored out_l x in_l.
struct MlpNet {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;

  std::size_t input_dimension() const { return weights.empty() ? 0 : weights.front().cols(); }

  static MlpNet init(std::size_t input, const std::vector<std::size_t>& hidden, bool nonnegative,
                     std::uint64_t seed);

  double forward(std::span<const double> x) const;
  std::vector<double> forward_batch(const Matrix& x) const;

  // Clamps every weight to be >= 0.
  void project_nonnegative();
  bool all_weights_nonnegative() const;

  nlohmann::json to_json() const;
  static MlpNet from_json(const nlohmann::json& j);
};

// Cached activations of one batch, used by backward().
struct MlpTape {
  std::vector<Matrix> activations;  // activations[0] is the input
  std::vector<double> logits;
};

struct MlpGradients {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
  Matrix input;  // d loss / d input, filled when requested
};

MlpTape mlp_forward(const MlpNet& net, const Matrix& x);
// `dlogits` holds d loss / d logit per row.
MlpGradients mlp_backward(const MlpNet& net, const MlpTape& tape, const std::vector<double>& dlogits,
                          bool want_input_gradient);

// Adam state over a flat list of parameter blocks.
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps) {}

  // Updates `params` in place; blocks are identified by their position.
  void step(std::vector<std::span<double>> params, std::vector<std::span<const double>> grads);
  double learning_rate() const { return lr_; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Numerically stable binary cross-entropy on a logit, and its derivative.
double bce_with_logit(double logit, int label);
double sigmoid(double z);

class MlpDetector : public Detector {
 public:
  MlpDetector(MlpNet net, Scaler scaler, MappingId schema, bool monotone);

  double score(std::span<const double> v) const override;
  std::vector<double> score_batch(const Matrix& x) const override;
  nlohmann::json parameters() const override;
  static std::unique_ptr<MlpDetector> from_parameters(const nlohmann::json& p, MappingId schema);

  const MlpNet& net() const { return net_; }
  const Scaler& scaler() const { return scaler_; }

 private:
  MlpNet net_;
  Scaler scaler_;
};

// Minibatch Adam on binary cross-entropy for config.epochs epochs. With
// config.monotone every weight is projected onto [0, inf) after each update.
std::unique_ptr<MlpDetector> train_mlp(const TrainingSet& fit, const MlpConfig& config);

// ---- gradient-boosted trees --------------------------------------------------

struct GbtConfig {
  int trees = 50;
  int depth = 3;
  double learning_rate = 0.1;
  // Empty means "all increasing" when monotone is set, otherwise unconstrained.
  bool monotone = false;
  std::vector<bool> increasing;
  std::size_t min_samples_leaf = 1;
  std::uint64_t seed = 1;
};

void to_json(nlohmann::json& j, const GbtConfig& c);
void from_json(const nlohmann::json& j, GbtConfig& c);

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // x[feature] <= threshold goes left
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf value
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  double predict(std::span<const double> x) const;
};

class GbtDetector : public Detector {
 public:
  GbtDetector(double base, double learning_rate, std::vector<RegressionTree> trees,
              std::vector<bool> increasing, MappingId schema, std::size_t dimension);

  double score(std::span<const double> v) const override;
  nlohmann::json parameters() const override;
  static std::unique_ptr<GbtDetector> from_parameters(const nlohmann::json& p, MappingId schema);

  const std::vector<RegressionTree>& trees() const { return trees_; }
  double base() const { return base_; }
  const std::vector<bool>& increasing() const { return increasing_; }

 private:
  double base_;
  double learning_rate_;
  std::vector<RegressionTree> trees_;
  std::vector<bool> increasing_;
};

std::unique_ptr<GbtDetector> train_gbt(const TrainingSet& fit, const GbtConfig& config);

// ---- k nearest neighbours ----------------------------------------------------

class KnnDetector : public Detector {
 public:
  KnnDetector(Matrix reference, std::vector<int> labels, Scaler scaler, std::size_t k,
              MappingId schema);

  double score(std::span<const double> v) const override;
  std::vector<double> score_batch(const Matrix& x) const override;
  nlohmann::json parameters() const override;
  static std::unique_ptr<KnnDetector> from_parameters(const nlohmann::json& p, MappingId schema);

  std::size_t k() const { return k_; }

 private:
  double score_from_distances(std::span<const double> d) const;

  Matrix reference_;  // scaled training rows
  std::vector<int> labels_;
  Scaler scaler_;
  std::size_t k_;
};

// Throws kInvalidConfig unless 1 <= k <= rows and k is odd.
std::unique_ptr<KnnDetector> train_knn(const TrainingSet& fit, std::size_t k);

// ---- simple detectors for fixtures -------------------------------------------

class ConstantDetector : public Detector {
 public:
  ConstantDetector(double value, MappingId schema, std::size_t dimension);
  double score(std::span<const double> v) const override;
  nlohmann::json parameters() const override;

 private:
  double value_;
};

// score = w . v + b; monotone by construction when every weight is >= 0.
class LinearDetector : public Detector {
 public:
  LinearDetector(std::vector<double> weights, double bias, MappingId schema);
  double score(std::span<const double> v) const override;
  nlohmann::json parameters() const override;

 private:
  std::vector<double> w_;
  double b_;
};

// ---- thresholds and checks ---------------------------------------------------

// Threshold maximizing TPR - FPR, placed halfway between the lowest
// maximizing score and the next lower distinct score; the lowest maximizing
// cut wins ties. Throws kSingleClass when a class is missing.
double youden_threshold(const std::vector<double>& scores, const std::vector<int>& labels);

// Sets d's threshold to youden_threshold over its scores on `val`.
void calibrate_threshold(Detector& d, const TrainingSet& val);

struct MonotoneCheck {
  std::size_t violations = 0;
  std::vector<std::pair<std::vector<double>, std::vector<double>>> witnesses;  // first few
};

// Samples pairs v <= v' (v' = v + non-negative bump) and counts
// score(v) > score(v') + 1e-9. Base points are rows of `reference` when given,
// otherwise uniform in [0, 1]^F.
MonotoneCheck check_monotone_empirical(const Detector& d, int trials, std::uint64_t seed,
                                       const Matrix* reference = nullptr);

}  // namespace robustmal
