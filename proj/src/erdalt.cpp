#include "robustmal/erdalt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "robustmal/error.hpp"
#include "robustmal/metrics.hpp"
#include "robustmal/random.hpp"
#include "robustmal/threat_model.hpp"

namespace robustmal {

using nlohmann::json;

namespace {

json matrix_json(const Matrix& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

Matrix matrix_of(const json& j) {
  Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != m.rows() * m.cols()) throw Error(ErrorCode::kIntegrityError, "matrix payload size");
  m.data() = std::move(data);
  return m;
}

void check_deltas(const std::vector<std::vector<double>>& deltas, std::size_t dim) {
  if (deltas.empty()) throw Error(ErrorCode::kEmptyDeltaSet, "delta set is empty");
  for (const auto& d : deltas) {
    if (d.size() != dim) throw Error(ErrorCode::kDimensionMismatch, "delta dimension differs from the model");
  }
}

// Deltas divided coordinate-wise by the scaler's scale, one per row.
Matrix scaled_deltas(const std::vector<std::vector<double>>& deltas, const Scaler& s) {
  Matrix d(deltas.size(), s.scale.size());
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    for (std::size_t j = 0; j < s.scale.size(); ++j) d(k, j) = deltas[k][j] / s.scale[j];
  }
  return d;
}

double off_diagonal_mass(const Matrix& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
      if (i != j) s += std::fabs(w(i, j));
    }
  }
  return s;
}

}  // namespace

// ---- config -----------------------------------------------------------------------

void ErdaltConfig::validate() const {
  if (!(lambda1 > 0.0) || lambda2 < 0.0 || lambda3 < 0.0 || margin < 0.0) {
    throw Error(ErrorCode::kInvalidConfig, "ERDALT needs lambda1 > 0 and non-negative lambda2, lambda3, margin");
  }
  if (epochs < 0 || refit_epochs < 0 || min_epochs < 0 || patience < 1 || batch_size == 0 || !(learning_rate > 0.0) ||
      val_fraction < 0.0 || val_fraction >= 1.0) {
    throw Error(ErrorCode::kInvalidConfig, "invalid ERDALT training schedule");
  }
}

void to_json(json& j, const ErdaltConfig& c) {
  j = json{{"lambda1", c.lambda1},
           {"lambda2", c.lambda2},
           {"lambda3", c.lambda3},
           {"margin", c.margin},
           {"epochs", c.epochs},
           {"min_epochs", c.min_epochs},
           {"patience", c.patience},
           {"val_fraction", c.val_fraction},
           {"learning_rate", c.learning_rate},
           {"batch_size", c.batch_size},
           {"weight_decay", c.weight_decay},
           {"delta_batch", c.delta_batch},
           {"hidden", c.hidden},
           {"monotone_upper", c.monotone_upper},
           {"repair", c.repair == RepairMode::kZeroRows ? "zero_rows" : "off"},
           {"refit_epochs", c.refit_epochs},
           {"seed", c.seed}};
}

void from_json(const json& j, ErdaltConfig& c) {
  const ErdaltConfig d;
  c.lambda1 = j.value("lambda1", d.lambda1);
  c.lambda2 = j.value("lambda2", d.lambda2);
  c.lambda3 = j.value("lambda3", d.lambda3);
  c.margin = j.value("margin", d.margin);
  c.epochs = j.value("epochs", d.epochs);
  c.min_epochs = j.value("min_epochs", d.min_epochs);
  c.patience = j.value("patience", d.patience);
  c.val_fraction = j.value("val_fraction", d.val_fraction);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.delta_batch = j.value("delta_batch", d.delta_batch);
  c.hidden = j.value("hidden", d.hidden);
  c.monotone_upper = j.value("monotone_upper", d.monotone_upper);
  const std::string repair = j.value("repair", std::string("zero_rows"));
  if (repair == "zero_rows") {
    c.repair = RepairMode::kZeroRows;
  } else if (repair == "off") {
    c.repair = RepairMode::kOff;
  } else {
    throw Error(ErrorCode::kInvalidConfig, "repair must be 'off' or 'zero_rows'");
  }
  c.refit_epochs = j.value("refit_epochs", d.refit_epochs);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

// ---- linear certificate ------------------------------------------------------------

LinearCertificate certify_linear(const Matrix& w, const std::vector<std::vector<double>>& deltas, double eps) {
  LinearCertificate c;
  if (deltas.empty()) return c;
  for (const auto& d : deltas) {
    if (d.size() != w.cols()) throw Error(ErrorCode::kDimensionMismatch, "delta dimension differs from W");
  }
  Matrix z;
  kernels::gemm_abt(Matrix::from_rows(deltas), w, z);
  double worst = 0.0;
  bool found = false;
  for (std::size_t k = 0; k < z.rows(); ++k) {
    for (std::size_t i = 0; i < z.cols(); ++i) {
      const double v = z(k, i);
      if (v < -eps && (!found || v < worst)) {
        found = true;
        worst = v;
        c.delta_index = k;
        c.coordinate = i;
      }
    }
  }
  if (found) {
    c.certified = false;
    c.value = worst;
    c.delta = deltas[c.delta_index];
  }
  return c;
}

RepairResult repair_linear(const Matrix& w, const std::vector<std::vector<double>>& deltas) {
  RepairResult r{w, {}, false};
  if (!deltas.empty()) {
    Matrix z;
    kernels::gemm_abt(Matrix::from_rows(deltas), w, z);
    for (std::size_t i = 0; i < w.rows(); ++i) {
      bool negative = false;
      for (std::size_t k = 0; k < z.rows() && !negative; ++k) negative = z(k, i) < 0.0;
      if (negative) {
        r.zeroed_rows.push_back(i);
        std::fill(r.w.row(i).begin(), r.w.row(i).end(), 0.0);
      }
    }
  }
  r.all_rows_zeroed = w.rows() > 0 && r.zeroed_rows.size() == w.rows();
  return r;
}

// ---- detector ----------------------------------------------------------------------

ErdaltDetector::ErdaltDetector(Scaler scaler, Matrix w, MlpNet upper, MappingId schema, bool monotone_upper)
    : scaler_(std::move(scaler)), w_(std::move(w)), upper_(std::move(upper)), monotone_upper_(monotone_upper) {
  const std::size_t dim = scaler_.mean.size();
  if (w_.rows() != dim || w_.cols() != dim || upper_.input_dimension() != dim) {
    throw Error(ErrorCode::kDimensionMismatch, "ERDALT layer shapes disagree");
  }
  if (monotone_upper_ && !upper_.all_weights_nonnegative()) {
    throw Error(ErrorCode::kIntegrityError, "monotone upper network has a negative weight");
  }
  info_ = {monotone_upper_ ? "erdalt" : "erdalt_linear", schema, false, dim};
}

Matrix ErdaltDetector::effective_weights() const {
  Matrix e = w_;
  for (std::size_t i = 0; i < e.rows(); ++i) {
    for (std::size_t j = 0; j < e.cols(); ++j) e(i, j) = w_(i, j) / scaler_.scale[j];
  }
  return e;
}

void ErdaltDetector::set_w(Matrix w) {
  if (w.rows() != w_.rows() || w.cols() != w_.cols()) throw Error(ErrorCode::kDimensionMismatch, "W shape");
  w_ = std::move(w);
  certified_against_.reset();
}

Matrix ErdaltDetector::hidden_input(const Matrix& x) const {
  Matrix h;
  kernels::gemm_abt(scaler_.apply(x), w_, h);
  return h;
}

double ErdaltDetector::score(std::span<const double> v) const {
  check_dimension(v);
  std::vector<double> xs(v.size());
  scaler_.apply_row(v, xs);
  std::vector<double> h(w_.rows());
  for (std::size_t i = 0; i < w_.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < w_.cols(); ++j) s += xs[j] * w_(i, j);
    h[i] = s;
  }
  return upper_.forward(h);
}

std::vector<double> ErdaltDetector::score_batch(const Matrix& x) const {
  if (x.rows() == 0) return {};
  check_dimension(x.row(0));
  return upper_.forward_batch(hidden_input(x));
}

bool ErdaltDetector::certify(const std::vector<std::vector<double>>& deltas) {
  check_deltas(deltas, w_.cols());
  const bool ok = monotone_upper_ && certify_linear(effective_weights(), deltas).certified;
  if (ok) {
    certified_against_ = delta_digest(deltas);
  } else {
    certified_against_.reset();
  }
  return ok;
}

void ErdaltDetector::repair(const std::vector<std::vector<double>>& deltas) {
  check_deltas(deltas, w_.cols());
  const RepairResult r = repair_linear(effective_weights(), deltas);
  for (auto i : r.zeroed_rows) std::fill(w_.row(i).begin(), w_.row(i).end(), 0.0);
  repair_log_ = r.zeroed_rows;
  certify(deltas);
}

json ErdaltDetector::parameters() const {
  return json{{"monotone_upper", monotone_upper_},
              {"scaler", scaler_.to_json()},
              {"W", matrix_json(w_)},
              {"upper", upper_.to_json()},
              {"certified_against", certified_against_ ? json(*certified_against_) : json(nullptr)},
              {"repair_log", repair_log_}};
}

std::unique_ptr<ErdaltDetector> ErdaltDetector::from_parameters(const json& p, MappingId schema) {
  auto d = std::make_unique<ErdaltDetector>(Scaler::from_json(p.at("scaler")), matrix_of(p.at("W")),
                                            MlpNet::from_json(p.at("upper")), schema,
                                            p.at("monotone_upper").get<bool>());
  if (!p.at("certified_against").is_null()) d->certified_against_ = p.at("certified_against").get<std::string>();
  d->repair_log_ = p.at("repair_log").get<std::vector<std::size_t>>();
  return d;
}

// ---- loss and training -------------------------------------------------------------

ErdaltLoss erdalt_loss(const ErdaltDetector& model, const Matrix& x, const std::vector<int>& y,
                       const std::vector<std::vector<double>>& deltas, const ErdaltConfig& config) {
  check_deltas(deltas, model.w().cols());
  if (x.rows() == 0 || x.rows() != y.size()) throw Error(ErrorCode::kDimensionMismatch, "batch is empty");
  ErdaltLoss l;
  const auto logits = model.score_batch(x);
  for (std::size_t i = 0; i < y.size(); ++i) l.l1 += bce_with_logit(logits[i], y[i]);
  l.l1 /= static_cast<double>(y.size());

  Matrix z;
  kernels::gemm_abt(scaled_deltas(deltas, model.scaler()), model.w(), z);
  for (double v : z.data()) l.l2 += std::max(0.0, config.margin - v);
  l.l2 /= static_cast<double>(deltas.size());
  l.l3 = off_diagonal_mass(model.w());
  l.total = config.lambda1 * l.l1 + config.lambda2 * l.l2 + config.lambda3 * l.l3;
  return l;
}

namespace {

// Shared state of one training run over standardized inputs.
struct ErdaltTrainer {
  const ErdaltConfig& config;
  const Matrix& xs;
  const std::vector<int>& y;
  const Matrix& ds;  // scaled deltas
  const Scaler& scaler;
  const TrainingSet& val;
  MappingId schema;
  bool val_usable;
  Rng rng;

  double val_auc(const Matrix& w, const MlpNet& upper) const {
    const ErdaltDetector d(scaler, w, upper, schema, config.monotone_upper);
    return roc_auc(d.score_batch(val.x), val.y);
  }

  // Runs up to `epochs` epochs from (w, upper); with update_w false only the
  // upper network moves. Leaves the best validation snapshot in (w, upper).
  void run(Matrix& w, MlpNet& upper, int epochs, bool update_w) {
    const std::size_t dim = xs.cols();
    const bool sample_deltas = config.delta_batch > 0 && config.delta_batch < ds.rows();
    const std::size_t per_step = sample_deltas ? config.delta_batch : ds.rows();
    const double delta_weight = config.lambda2 / static_cast<double>(per_step);
    Matrix dstep = ds;
    Adam adam(config.learning_rate);

    Matrix best_w = w;
    MlpNet best_upper = upper;
    double best_auc = -1.0;
    int since_best = 0;
    std::vector<std::size_t> order(xs.rows());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < epochs; ++epoch) {
      rng.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        const std::size_t end = std::min(order.size(), start + config.batch_size);
        Matrix xb(end - start, dim);
        std::vector<int> yb;
        for (std::size_t r = start; r < end; ++r) {
          std::copy(xs.row(order[r]).begin(), xs.row(order[r]).end(), xb.row(r - start).begin());
          yb.push_back(y[order[r]]);
        }
        Matrix h;
        kernels::gemm_abt(xb, w, h);
        const MlpTape tape = mlp_forward(upper, h);
        std::vector<double> dlogits(yb.size());
        const double inv = config.lambda1 / static_cast<double>(yb.size());
        for (std::size_t i = 0; i < yb.size(); ++i) dlogits[i] = (sigmoid(tape.logits[i]) - yb[i]) * inv;
        MlpGradients g = mlp_backward(upper, tape, dlogits, update_w);

        std::vector<std::span<double>> params;
        std::vector<std::span<const double>> grads;
        Matrix gw;
        if (update_w) {
          // d l1 / dW = dH^T X.
          kernels::gemm_atb(g.input, xb, gw);
          // Hinge: every (delta, row) below the margin pushes W_i toward
          // delta. A uniform sample of deltas estimates the mean.
          if (sample_deltas) {
            dstep.resize(per_step, dim);
            for (std::size_t k = 0; k < per_step; ++k) {
              const auto src = ds.row(rng.index(ds.rows()));
              std::copy(src.begin(), src.end(), dstep.row(k).begin());
            }
          }
          Matrix z;
          kernels::gemm_abt(dstep, w, z);
          Matrix active(z.rows(), z.cols());
          bool any = false;
          for (std::size_t i = 0; i < z.data().size(); ++i) {
            if (z.data()[i] < config.margin) {
              active.data()[i] = -delta_weight;
              any = true;
            }
          }
          if (any) {
            Matrix gh;
            kernels::gemm_atb(active, dstep, gh);
            for (std::size_t i = 0; i < gw.data().size(); ++i) gw.data()[i] += gh.data()[i];
          }
          params.emplace_back(w.data());
          grads.emplace_back(gw.data());
        }
        for (std::size_t l = 0; l < upper.weights.size(); ++l) {
          auto& gwl = g.weights[l].data();
          const auto& wl = upper.weights[l].data();
          for (std::size_t i = 0; i < gwl.size(); ++i) gwl[i] += config.weight_decay * wl[i];
          params.emplace_back(upper.weights[l].data());
          grads.emplace_back(g.weights[l].data());
          params.emplace_back(upper.biases[l]);
          grads.emplace_back(g.biases[l]);
        }
        adam.step(params, grads);

        if (update_w) {
          // Proximal step for the off-diagonal L1 term.
          const double shrink = config.learning_rate * config.lambda3;
          for (std::size_t i = 0; i < dim; ++i) {
            for (std::size_t j = 0; j < dim; ++j) {
              if (i == j) continue;
              const double v = w(i, j);
              w(i, j) = std::copysign(std::max(std::fabs(v) - shrink, 0.0), v);
            }
          }
        }
        if (config.monotone_upper) upper.project_nonnegative();
      }

      if (!val_usable) continue;
      const double auc = val_auc(w, upper);
      if (auc > best_auc) {
        best_auc = auc;
        best_w = w;
        best_upper = upper;
        since_best = 0;
      } else if (++since_best >= config.patience && epoch + 1 >= config.min_epochs) {
        break;
      }
    }
    if (val_usable && best_auc >= 0.0) {
      w = std::move(best_w);
      upper = std::move(best_upper);
    }
  }
};

}  // namespace

std::unique_ptr<ErdaltDetector> train_erdalt(const TrainingSet& train,
                                             const std::vector<std::vector<double>>& deltas,
                                             const ErdaltConfig& config) {
  config.validate();
  const std::size_t dim = train.x.cols();
  check_deltas(deltas, dim);
  require_two_classes(train.y);

  std::vector<std::size_t> fit_idx(train.size());
  std::iota(fit_idx.begin(), fit_idx.end(), 0);
  std::vector<std::size_t> val_idx;
  if (config.val_fraction > 0.0) std::tie(fit_idx, val_idx) = validation_split(train.y, config.val_fraction, config.seed);
  const TrainingSet fit = subset(train, fit_idx);
  const TrainingSet val = subset(train, val_idx);
  require_two_classes(fit.y);
  const bool val_usable = std::count(val.y.begin(), val.y.end(), 1) > 0 &&
                          std::count(val.y.begin(), val.y.end(), 0) > 0;

  const Scaler scaler = Scaler::fit(fit.x);
  const Matrix xs = scaler.apply(fit.x);
  const Matrix ds = scaled_deltas(deltas, scaler);
  ErdaltTrainer trainer{config, xs, fit.y, ds, scaler, val, train.schema_id, val_usable,
                        Rng(config.seed ^ 0x2545f4914f6cdd1dULL)};

  Matrix w = Matrix::identity(dim);
  MlpNet upper = MlpNet::init(dim, config.hidden, config.monotone_upper, config.seed);
  trainer.run(w, upper, config.epochs, true);

  auto model = std::make_unique<ErdaltDetector>(scaler, w, upper, train.schema_id, config.monotone_upper);
  if (config.repair == RepairMode::kZeroRows) {
    model->repair(deltas);
    if (!model->repair_log().empty() && config.refit_epochs > 0) {
      // Retrain the upper network on the repaired layer; W stays fixed, so
      // the certificate is unaffected.
      Matrix repaired = model->w();
      const auto log = model->repair_log();
      trainer.run(repaired, upper, config.refit_epochs, false);
      model = std::make_unique<ErdaltDetector>(scaler, repaired, upper, train.schema_id, config.monotone_upper);
      model->repair(deltas);
      if (model->repair_log().empty()) model->set_repair_log(log);
    }
  } else {
    model->certify(deltas);
  }
  calibrate_threshold(*model, val_usable ? val : fit);
  return model;
}

}  // namespace robustmal
