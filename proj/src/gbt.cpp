#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "robustmal/detectors.hpp"
#include "robustmal/error.hpp"

namespace robustmal {

using nlohmann::json;

void to_json(json& j, const GbtConfig& c) {
  j = json{{"trees", c.trees},
           {"depth", c.depth},
           {"learning_rate", c.learning_rate},
           {"monotone", c.monotone},
           {"increasing", c.increasing},
           {"min_samples_leaf", c.min_samples_leaf},
           {"seed", c.seed}};
}

void from_json(const json& j, GbtConfig& c) {
  const GbtConfig d;
  c.trees = j.value("trees", d.trees);
  c.depth = j.value("depth", d.depth);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.monotone = j.value("monotone", d.monotone);
  c.increasing = j.value("increasing", d.increasing);
  c.min_samples_leaf = j.value("min_samples_leaf", d.min_samples_leaf);
  c.seed = j.value("seed", d.seed);
  if (c.trees < 0 || c.depth < 0 || !(c.learning_rate > 0.0) || c.min_samples_leaf == 0) {
    throw Error(ErrorCode::kInvalidConfig, "invalid GBT configuration");
  }
}

double RegressionTree::predict(std::span<const double> x) const {
  std::size_t i = 0;
  while (nodes[i].feature >= 0) {
    const auto& n = nodes[i];
    i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
  }
  return nodes[i].value;
}

GbtDetector::GbtDetector(double base, double learning_rate, std::vector<RegressionTree> trees,
                         std::vector<bool> increasing, MappingId schema, std::size_t dimension)
    : base_(base), learning_rate_(learning_rate), trees_(std::move(trees)), increasing_(std::move(increasing)) {
  if (increasing_.size() != dimension) {
    throw Error(ErrorCode::kDimensionMismatch, "GBT constraint vector has the wrong length");
  }
  for (const auto& t : trees_) {
    if (t.nodes.empty()) throw Error(ErrorCode::kIntegrityError, "GBT tree has no nodes");
    for (const auto& n : t.nodes) {
      if (n.feature >= 0 && (static_cast<std::size_t>(n.feature) >= dimension || n.left < 0 || n.right < 0 ||
                             static_cast<std::size_t>(std::max(n.left, n.right)) >= t.nodes.size())) {
        throw Error(ErrorCode::kIntegrityError, "GBT node references are out of range");
      }
    }
  }
  const bool all_increasing = std::all_of(increasing_.begin(), increasing_.end(), [](bool b) { return b; });
  info_ = {all_increasing ? "gbt_monotone" : "gbt", schema, all_increasing, dimension};
}

double GbtDetector::score(std::span<const double> v) const {
  check_dimension(v);
  double s = 0.0;
  for (const auto& t : trees_) s += t.predict(v);
  return base_ + learning_rate_ * s;
}

json GbtDetector::parameters() const {
  json trees = json::array();
  for (const auto& t : trees_) {
    json nodes = json::array();
    for (const auto& n : t.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
    trees.push_back(std::move(nodes));
  }
  return json{{"base", base_},
              {"learning_rate", learning_rate_},
              {"increasing", increasing_},
              {"trees", std::move(trees)}};
}

std::unique_ptr<GbtDetector> GbtDetector::from_parameters(const json& p, MappingId schema) {
  std::vector<RegressionTree> trees;
  for (const auto& jt : p.at("trees")) {
    RegressionTree t;
    for (const auto& jn : jt) {
      t.nodes.push_back({jn.at(0).get<int>(), jn.at(1).get<double>(), jn.at(2).get<int>(), jn.at(3).get<int>(),
                         jn.at(4).get<double>()});
    }
    trees.push_back(std::move(t));
  }
  auto increasing = p.at("increasing").get<std::vector<bool>>();
  const std::size_t dim = increasing.size();
  return std::make_unique<GbtDetector>(p.at("base").get<double>(), p.at("learning_rate").get<double>(),
                                       std::move(trees), std::move(increasing), schema, dim);
}

namespace {

struct TreeBuilder {
  const Matrix& x;
  const std::vector<double>& r;
  const std::vector<std::vector<std::size_t>>& sorted;  // per feature, rows by value
  const std::vector<bool>& increasing;
  int max_depth;
  std::size_t min_leaf;
  std::vector<char> in_node;
  RegressionTree tree;

  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
    double left_value = 0.0;
    double right_value = 0.0;
  };

  Split best_split(const std::vector<std::size_t>& rows, double lo, double hi) {
    double total = 0.0;
    for (auto i : rows) total += r[i];
    const auto n = static_cast<double>(rows.size());
    const double parent = total * total / n;
    Split best;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double sl = 0.0;
      std::size_t nl = 0;
      std::size_t prev = 0;
      bool have_prev = false;
      for (auto i : sorted[j]) {
        if (!in_node[i]) continue;
        if (have_prev && x(prev, j) < x(i, j) && nl >= min_leaf && rows.size() - nl >= min_leaf) {
          const double sr = total - sl;
          const auto dl = static_cast<double>(nl);
          const auto dr = n - dl;
          const double gain = sl * sl / dl + sr * sr / dr - parent;
          const double vl = std::clamp(sl / dl, lo, hi);
          const double vr = std::clamp(sr / dr, lo, hi);
          const bool admissible = !increasing[j] || vl <= vr;
          if (admissible && gain > best.gain + 1e-15) {
            double thr = 0.5 * (x(prev, j) + x(i, j));
            if (thr >= x(i, j)) thr = x(prev, j);
            best = {static_cast<int>(j), thr, gain, vl, vr};
          }
        }
        sl += r[i];
        ++nl;
        prev = i;
        have_prev = true;
      }
    }
    return best;
  }

  int build(const std::vector<std::size_t>& rows, int depth, double lo, double hi) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    double sum = 0.0;
    for (auto i : rows) sum += r[i];
    tree.nodes[static_cast<std::size_t>(id)].value =
        std::clamp(sum / static_cast<double>(rows.size()), lo, hi);
    if (depth >= max_depth || rows.size() < 2 * min_leaf) return id;

    for (auto i : rows) in_node[i] = 1;
    const Split s = best_split(rows, lo, hi);
    for (auto i : rows) in_node[i] = 0;
    if (s.feature < 0) return id;

    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    for (auto i : rows) {
      (x(i, static_cast<std::size_t>(s.feature)) <= s.threshold ? left : right).push_back(i);
    }
    double llo = lo, lhi = hi, rlo = lo, rhi = hi;
    if (increasing[static_cast<std::size_t>(s.feature)]) {
      const double mid = 0.5 * (s.left_value + s.right_value);
      lhi = mid;
      rlo = mid;
    }
    const int l = build(left, depth + 1, llo, lhi);
    const int rr = build(right, depth + 1, rlo, rhi);
    auto& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = s.feature;
    node.threshold = s.threshold;
    node.left = l;
    node.right = rr;
    node.value = 0.0;
    return id;
  }
};

}  // namespace

std::unique_ptr<GbtDetector> train_gbt(const TrainingSet& fit, const GbtConfig& config) {
  require_two_classes(fit.y);
  const std::size_t n = fit.x.rows();
  const std::size_t dim = fit.x.cols();
  std::vector<bool> increasing = config.increasing;
  if (increasing.empty()) increasing.assign(dim, config.monotone);
  if (increasing.size() != dim) throw Error(ErrorCode::kDimensionMismatch, "constraint vector length");

  double pos = 0.0;
  for (int y : fit.y) pos += y;
  const double p = std::clamp(pos / static_cast<double>(n), 1e-6, 1.0 - 1e-6);
  const double base = std::log(p / (1.0 - p));

  std::vector<std::vector<std::size_t>> sorted(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    sorted[j].resize(n);
    std::iota(sorted[j].begin(), sorted[j].end(), 0);
    std::stable_sort(sorted[j].begin(), sorted[j].end(),
                     [&](std::size_t a, std::size_t b) { return fit.x(a, j) < fit.x(b, j); });
  }

  std::vector<double> f(n, base);
  std::vector<double> residual(n);
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::vector<RegressionTree> trees;
  const double inf = std::numeric_limits<double>::infinity();
  for (int t = 0; t < config.trees; ++t) {
    for (std::size_t i = 0; i < n; ++i) residual[i] = fit.y[i] - sigmoid(f[i]);
    TreeBuilder b{fit.x, residual, sorted, increasing, config.depth, config.min_samples_leaf,
                  std::vector<char>(n, 0), {}};
    b.build(all, 0, -inf, inf);
    for (std::size_t i = 0; i < n; ++i) f[i] += config.learning_rate * b.tree.predict(fit.x.row(i));
    trees.push_back(std::move(b.tree));
  }
  return std::make_unique<GbtDetector>(base, config.learning_rate, std::move(trees), std::move(increasing),
                                       fit.schema_id, dim);
}

}  // namespace robustmal
