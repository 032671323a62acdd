#include "robustmal/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "robustmal/error.hpp"
#include "robustmal/pe.hpp"
#include "robustmal/random.hpp"

namespace robustmal {

using nlohmann::json;

namespace {

json matrix_to_json(const Matrix& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

Matrix matrix_from_json(const json& j) {
  Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != m.rows() * m.cols()) {
    throw Error(ErrorCode::kIntegrityError, "matrix payload has the wrong size");
  }
  m.data() = std::move(data);
  return m;
}

}  // namespace

// ---- training data -------------------------------------------------------------

TrainingSet build_training_set(const std::vector<ProgramArtifact>& artifacts, MappingId mapping) {
  const std::size_t dim = feature_schema(mapping).dimension;
  TrainingSet t;
  t.schema_id = mapping;
  t.x.resize(artifacts.size(), dim);
  t.y.resize(artifacts.size());
  std::vector<std::exception_ptr> errors(artifacts.size());
  const auto n = static_cast<long>(artifacts.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (long i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      const auto f = extract_features(mapping, parse_pe(artifacts[k].bytes));
      std::copy(f.values.begin(), f.values.end(), t.x.row(k).begin());
      t.y[k] = artifacts[k].label;
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return t;
}

TrainingSet subset(const TrainingSet& t, const std::vector<std::size_t>& idx) {
  TrainingSet out;
  out.schema_id = t.schema_id;
  out.x.resize(idx.size(), t.x.cols());
  out.y.reserve(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy(t.x.row(idx[r]).begin(), t.x.row(idx[r]).end(), out.x.row(r).begin());
    out.y.push_back(t.y[idx[r]]);
  }
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> validation_split(
    const std::vector<int>& y, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> fit;
  std::vector<std::size_t> val;
  Rng rng(seed);
  for (int label : {0, 1}) {
    std::vector<std::size_t> cls;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] == label) cls.push_back(i);
    }
    rng.shuffle(cls);
    auto n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(cls.size())));
    if (val_fraction > 0.0 && cls.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, cls.size() - 1);
    val.insert(val.end(), cls.begin(), cls.begin() + static_cast<std::ptrdiff_t>(n_val));
    fit.insert(fit.end(), cls.begin() + static_cast<std::ptrdiff_t>(n_val), cls.end());
  }
  std::sort(fit.begin(), fit.end());
  std::sort(val.begin(), val.end());
  return {fit, val};
}

void require_two_classes(const std::vector<int>& y) {
  const bool pos = std::find(y.begin(), y.end(), 1) != y.end();
  const bool neg = std::find(y.begin(), y.end(), 0) != y.end();
  if (!pos || !neg) throw Error(ErrorCode::kDegenerateDataset, "training data has a single class");
}

// ---- Detector base -------------------------------------------------------------

std::vector<double> Detector::score_batch(const Matrix& x) const {
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = score(x.row(i));
  return out;
}

json Detector::to_json() const {
  return json{{"format_version", kModelFormatVersion},
              {"model_kind", info_.model_kind},
              {"schema_id", mapping_name(info_.schema_id)},
              {"monotone_by_construction", info_.monotone_by_construction},
              {"input_dimension", info_.input_dimension},
              {"threshold", threshold_},
              {"parameters", parameters()}};
}

void Detector::check_dimension(std::span<const double> v) const {
  if (v.size() != info_.input_dimension) {
    throw Error(ErrorCode::kDimensionMismatch,
                info_.model_kind + " expects " + std::to_string(info_.input_dimension) +
                    " features, got " + std::to_string(v.size()));
  }
}

// ---- Scaler ----------------------------------------------------------------------

Scaler Scaler::fit(const Matrix& x) {
  Scaler s;
  const std::size_t n = x.rows();
  s.mean.assign(x.cols(), 0.0);
  s.scale.assign(x.cols(), 1.0);
  if (n == 0) return s;
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += x(i, j);
    m /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (x(i, j) - m) * (x(i, j) - m);
    var /= static_cast<double>(n);
    s.mean[j] = m;
    s.scale[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  return s;
}

Scaler Scaler::identity(std::size_t dim) {
  Scaler s;
  s.mean.assign(dim, 0.0);
  s.scale.assign(dim, 1.0);
  return s;
}

void Scaler::apply_row(std::span<const double> in, std::span<double> out) const {
  for (std::size_t j = 0; j < in.size(); ++j) out[j] = (in[j] - mean[j]) / scale[j];
}

Matrix Scaler::apply(const Matrix& x) const {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) apply_row(x.row(i), out.row(i));
  return out;
}

json Scaler::to_json() const { return json{{"mean", mean}, {"scale", scale}}; }

Scaler Scaler::from_json(const json& j) {
  Scaler s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.scale = j.at("scale").get<std::vector<double>>();
  if (s.mean.size() != s.scale.size()) throw Error(ErrorCode::kIntegrityError, "scaler size mismatch");
  for (double x : s.scale) {
    if (!(x > 0.0)) throw Error(ErrorCode::kIntegrityError, "scaler scale must be positive");
  }
  return s;
}

// ---- MLP -------------------------------------------------------------------------

void to_json(json& j, const MlpConfig& c) {
  j = json{{"hidden", c.hidden},       {"monotone", c.monotone},
           {"epochs", c.epochs},       {"learning_rate", c.learning_rate},
           {"batch_size", c.batch_size}, {"weight_decay", c.weight_decay},
           {"seed", c.seed}};
}

void from_json(const json& j, MlpConfig& c) {
  const MlpConfig d;
  c.hidden = j.value("hidden", d.hidden);
  c.monotone = j.value("monotone", d.monotone);
  c.epochs = j.value("epochs", d.epochs);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.seed = j.value("seed", d.seed);
  if (c.epochs < 0 || c.batch_size == 0 || !(c.learning_rate > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "invalid MLP configuration");
  }
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double bce_with_logit(double logit, int label) {
  // log(1 + exp(-|z|)) + max(z, 0) - y z
  return std::log1p(std::exp(-std::fabs(logit))) + std::max(logit, 0.0) - label * logit;
}

MlpNet MlpNet::init(std::size_t input, const std::vector<std::size_t>& hidden, bool nonnegative,
                    std::uint64_t seed) {
  Rng rng(seed);
  MlpNet net;
  std::size_t in = input;
  std::vector<std::size_t> sizes = hidden;
  sizes.push_back(1);
  for (std::size_t out : sizes) {
    Matrix w(out, in);
    const double sd = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(in, 1)));
    for (auto& x : w.data()) {
      x = rng.normal() * sd;
      if (nonnegative) x = std::fabs(x);
    }
    net.weights.push_back(std::move(w));
    net.biases.emplace_back(out, 0.0);
    in = out;
  }
  return net;
}

double MlpNet::forward(std::span<const double> x) const {
  std::vector<double> a(x.begin(), x.end());
  std::vector<double> z;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const Matrix& w = weights[l];
    z.assign(w.rows(), 0.0);
    for (std::size_t o = 0; o < w.rows(); ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < w.cols(); ++i) s += a[i] * w(o, i);
      z[o] = s + biases[l][o];
    }
    if (l + 1 < weights.size()) {
      for (auto& v : z) v = std::tanh(v);
    }
    a.swap(z);
  }
  return a[0];
}

MlpTape mlp_forward(const MlpNet& net, const Matrix& x) {
  MlpTape tape;
  tape.activations.push_back(x);
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    Matrix z;
    kernels::gemm_abt(tape.activations.back(), net.weights[l], z);
    const auto& b = net.biases[l];
    const bool hidden = l + 1 < net.weights.size();
    for (std::size_t r = 0; r < z.rows(); ++r) {
      auto row = z.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) {
        row[c] += b[c];
        if (hidden) row[c] = std::tanh(row[c]);
      }
    }
    if (hidden) {
      tape.activations.push_back(std::move(z));
    } else {
      tape.logits.assign(z.data().begin(), z.data().end());
    }
  }
  return tape;
}

std::vector<double> MlpNet::forward_batch(const Matrix& x) const { return mlp_forward(*this, x).logits; }

MlpGradients mlp_backward(const MlpNet& net, const MlpTape& tape, const std::vector<double>& dlogits,
                          bool want_input_gradient) {
  const std::size_t layers = net.weights.size();
  MlpGradients g;
  g.weights.resize(layers);
  g.biases.resize(layers);
  Matrix dz(dlogits.size(), 1);
  std::copy(dlogits.begin(), dlogits.end(), dz.data().begin());
  for (std::size_t step = 0; step < layers; ++step) {
    const std::size_t l = layers - 1 - step;
    const Matrix& input = tape.activations[l];
    kernels::gemm_atb(dz, input, g.weights[l]);
    g.biases[l].assign(dz.cols(), 0.0);
    for (std::size_t r = 0; r < dz.rows(); ++r) {
      for (std::size_t c = 0; c < dz.cols(); ++c) g.biases[l][c] += dz(r, c);
    }
    if (l == 0 && !want_input_gradient) break;
    Matrix da;
    kernels::gemm(dz, net.weights[l], da);
    if (l == 0) {
      g.input = std::move(da);
      break;
    }
    // tanh'(z) = 1 - a^2 for the activation feeding layer l.
    for (std::size_t i = 0; i < da.data().size(); ++i) {
      const double a = input.data()[i];
      da.data()[i] *= 1.0 - a * a;
    }
    dz = std::move(da);
  }
  return g;
}

void MlpNet::project_nonnegative() {
  for (auto& w : weights) {
    for (auto& x : w.data()) x = std::max(x, 0.0);
  }
}

bool MlpNet::all_weights_nonnegative() const {
  for (const auto& w : weights) {
    for (double x : w.data()) {
      if (x < 0.0) return false;
    }
  }
  return true;
}

json MlpNet::to_json() const {
  json layers = json::array();
  for (std::size_t l = 0; l < weights.size(); ++l) {
    layers.push_back({{"weights", matrix_to_json(weights[l])}, {"bias", biases[l]}});
  }
  return layers;
}

MlpNet MlpNet::from_json(const json& j) {
  MlpNet net;
  for (const auto& layer : j) {
    net.weights.push_back(matrix_from_json(layer.at("weights")));
    net.biases.push_back(layer.at("bias").get<std::vector<double>>());
    if (net.biases.back().size() != net.weights.back().rows()) {
      throw Error(ErrorCode::kIntegrityError, "MLP bias size mismatch");
    }
    if (net.weights.size() > 1 && net.weights.back().cols() != net.weights[net.weights.size() - 2].rows()) {
      throw Error(ErrorCode::kIntegrityError, "MLP layer shapes do not chain");
    }
  }
  if (net.weights.empty() || net.weights.back().rows() != 1) {
    throw Error(ErrorCode::kIntegrityError, "MLP must end in a single output");
  }
  return net;
}

void Adam::step(std::vector<std::span<double>> params, std::vector<std::span<const double>> grads) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = m_[b];
    auto& v = v_[b];
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double g = grads[b][i];
      m[i] = b1_ * m[i] + (1.0 - b1_) * g;
      v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
      params[b][i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

MlpDetector::MlpDetector(MlpNet net, Scaler scaler, MappingId schema, bool monotone)
    : net_(std::move(net)), scaler_(std::move(scaler)) {
  if (monotone && !net_.all_weights_nonnegative()) {
    throw Error(ErrorCode::kIntegrityError, "monotone MLP has a negative weight");
  }
  if (scaler_.mean.size() != net_.input_dimension()) {
    throw Error(ErrorCode::kDimensionMismatch, "scaler and network disagree on input size");
  }
  info_ = {monotone ? "mlp_monotone" : "mlp", schema, monotone, net_.input_dimension()};
}

double MlpDetector::score(std::span<const double> v) const {
  check_dimension(v);
  std::vector<double> x(v.size());
  scaler_.apply_row(v, x);
  return net_.forward(x);
}

std::vector<double> MlpDetector::score_batch(const Matrix& x) const {
  if (x.rows() == 0) return {};
  check_dimension(x.row(0));
  return net_.forward_batch(scaler_.apply(x));
}

json MlpDetector::parameters() const {
  return json{{"monotone", info_.monotone_by_construction},
              {"scaler", scaler_.to_json()},
              {"layers", net_.to_json()}};
}

std::unique_ptr<MlpDetector> MlpDetector::from_parameters(const json& p, MappingId schema) {
  const bool monotone = p.value("monotone", false);
  return std::make_unique<MlpDetector>(MlpNet::from_json(p.at("layers")),
                                       Scaler::from_json(p.at("scaler")), schema, monotone);
}

std::unique_ptr<MlpDetector> train_mlp(const TrainingSet& fit, const MlpConfig& config) {
  require_two_classes(fit.y);
  const Scaler scaler = Scaler::fit(fit.x);
  const Matrix xs = scaler.apply(fit.x);
  MlpNet net = MlpNet::init(xs.cols(), config.hidden, config.monotone, config.seed);
  Adam adam(config.learning_rate);
  Rng rng(config.seed ^ 0x5bd1e995ULL);

  std::vector<std::size_t> order(xs.rows());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Matrix batch(end - start, xs.cols());
      std::vector<int> labels;
      for (std::size_t r = start; r < end; ++r) {
        std::copy(xs.row(order[r]).begin(), xs.row(order[r]).end(), batch.row(r - start).begin());
        labels.push_back(fit.y[order[r]]);
      }
      const MlpTape tape = mlp_forward(net, batch);
      std::vector<double> dlogits(labels.size());
      const double inv = 1.0 / static_cast<double>(labels.size());
      for (std::size_t i = 0; i < labels.size(); ++i) {
        dlogits[i] = (sigmoid(tape.logits[i]) - labels[i]) * inv;
      }
      MlpGradients g = mlp_backward(net, tape, dlogits, false);
      std::vector<std::span<double>> params;
      std::vector<std::span<const double>> grads;
      for (std::size_t l = 0; l < net.weights.size(); ++l) {
        auto& gw = g.weights[l].data();
        const auto& w = net.weights[l].data();
        for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += config.weight_decay * w[i];
        params.emplace_back(net.weights[l].data());
        grads.emplace_back(g.weights[l].data());
        params.emplace_back(net.biases[l]);
        grads.emplace_back(g.biases[l]);
      }
      adam.step(params, grads);
      if (config.monotone) net.project_nonnegative();
    }
  }
  return std::make_unique<MlpDetector>(std::move(net), scaler, fit.schema_id, config.monotone);
}

// ---- KNN -------------------------------------------------------------------------

KnnDetector::KnnDetector(Matrix reference, std::vector<int> labels, Scaler scaler, std::size_t k,
                         MappingId schema)
    : reference_(std::move(reference)), labels_(std::move(labels)), scaler_(std::move(scaler)), k_(k) {
  if (k_ == 0 || k_ > labels_.size() || k_ % 2 == 0) {
    throw Error(ErrorCode::kInvalidConfig, "k must be odd and between 1 and the number of rows");
  }
  if (reference_.rows() != labels_.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "KNN labels and rows differ");
  }
  info_ = {"knn", schema, false, reference_.cols()};
}

double KnnDetector::score_from_distances(std::span<const double> d) const {
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k_), idx.end(),
                    [&](std::size_t a, std::size_t b) { return d[a] < d[b] || (d[a] == d[b] && a < b); });
  std::size_t malicious = 0;
  for (std::size_t i = 0; i < k_; ++i) malicious += labels_[idx[i]] == 1;
  return static_cast<double>(malicious) / static_cast<double>(k_);
}

double KnnDetector::score(std::span<const double> v) const {
  check_dimension(v);
  Matrix q(1, v.size());
  scaler_.apply_row(v, q.row(0));
  Matrix d;
  kernels::squared_distances(q, reference_, d);
  return score_from_distances(d.row(0));
}

std::vector<double> KnnDetector::score_batch(const Matrix& x) const {
  if (x.rows() == 0) return {};
  check_dimension(x.row(0));
  Matrix d;
  kernels::squared_distances(scaler_.apply(x), reference_, d);
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = score_from_distances(d.row(i));
  return out;
}

json KnnDetector::parameters() const {
  return json{{"k", k_}, {"scaler", scaler_.to_json()}, {"reference", matrix_to_json(reference_)},
              {"labels", labels_}};
}

std::unique_ptr<KnnDetector> KnnDetector::from_parameters(const json& p, MappingId schema) {
  return std::make_unique<KnnDetector>(matrix_from_json(p.at("reference")),
                                       p.at("labels").get<std::vector<int>>(),
                                       Scaler::from_json(p.at("scaler")), p.at("k").get<std::size_t>(),
                                       schema);
}

std::unique_ptr<KnnDetector> train_knn(const TrainingSet& fit, std::size_t k) {
  require_two_classes(fit.y);
  Scaler scaler = Scaler::fit(fit.x);
  return std::make_unique<KnnDetector>(scaler.apply(fit.x), fit.y, scaler, k, fit.schema_id);
}

// ---- simple detectors -------------------------------------------------------------

ConstantDetector::ConstantDetector(double value, MappingId schema, std::size_t dimension)
    : value_(value) {
  info_ = {"constant", schema, true, dimension};
}

double ConstantDetector::score(std::span<const double> v) const {
  check_dimension(v);
  return value_;
}

json ConstantDetector::parameters() const { return json{{"value", value_}}; }

LinearDetector::LinearDetector(std::vector<double> weights, double bias, MappingId schema)
    : w_(std::move(weights)), b_(bias) {
  const bool monotone = std::all_of(w_.begin(), w_.end(), [](double w) { return w >= 0.0; });
  info_ = {"linear", schema, monotone, w_.size()};
}

double LinearDetector::score(std::span<const double> v) const {
  check_dimension(v);
  double s = b_;
  for (std::size_t i = 0; i < w_.size(); ++i) s += w_[i] * v[i];
  return s;
}

json LinearDetector::parameters() const { return json{{"weights", w_}, {"bias", b_}}; }

// ---- thresholds and checks ----------------------------------------------------------

double youden_threshold(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::kDimensionMismatch, "scores/labels size");
  std::size_t pos = 0;
  for (int y : labels) pos += y == 1;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw Error(ErrorCode::kSingleClass, "threshold needs both classes");

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  // Walk cuts from high to low; the cut at distinct score s counts samples
  // with score >= s. The threshold is the midpoint between s and the next
  // lower distinct score, or s itself when nothing lies below.
  double best_j = -2.0;
  double best_tau = scores[idx.back()];
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    const double s = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == s) {
      (labels[idx[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    const double j = static_cast<double>(tp) / static_cast<double>(pos) -
                     static_cast<double>(fp) / static_cast<double>(neg);
    if (j >= best_j) {
      best_j = j;
      best_tau = i < idx.size() ? std::midpoint(scores[idx[i]], s) : s;
    }
  }
  return best_tau;
}

void calibrate_threshold(Detector& d, const TrainingSet& val) {
  d.set_threshold(youden_threshold(d.score_batch(val.x), val.y));
}

MonotoneCheck check_monotone_empirical(const Detector& d, int trials, std::uint64_t seed,
                                       const Matrix* reference) {
  if (trials < 1) throw Error(ErrorCode::kInvalidConfig, "trials must be positive");
  const std::size_t dim = d.info().input_dimension;
  Rng rng(seed);
  MonotoneCheck out;
  std::vector<double> v(dim);
  std::vector<double> w(dim);
  for (int t = 0; t < trials; ++t) {
    if (reference != nullptr && reference->rows() > 0) {
      const auto r = reference->row(rng.index(reference->rows()));
      std::copy(r.begin(), r.end(), v.begin());
    } else {
      for (auto& x : v) x = rng.uniform();
    }
    // Bump a random subset of coordinates; sometimes a single one.
    const bool single = rng.bernoulli(0.3);
    const std::size_t only = rng.index(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      const bool bump = single ? i == only : rng.bernoulli(0.3);
      w[i] = v[i] + (bump ? rng.uniform() * (std::fabs(v[i]) + 1.0) : 0.0);
    }
    const double a = d.score(v);
    const double b = d.score(w);
    if (a > b + 1e-9) {
      ++out.violations;
      if (out.witnesses.size() < 5) out.witnesses.emplace_back(v, w);
    }
  }
  return out;
}

}  // namespace robustmal
