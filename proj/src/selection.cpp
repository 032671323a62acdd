#include "robustmal/selection.hpp"

#include <algorithm>
#include <map>

#include "robustmal/error.hpp"

namespace robustmal {

using nlohmann::json;

void to_json(json& j, const FeatureSelection& s) {
  j = json{{"schema_id", mapping_name(s.schema_id)},
           {"input_dimension", s.input_dimension},
           {"kept_indices", s.kept_indices},
           {"delta_digest", s.source}};
}

void from_json(const json& j, FeatureSelection& s) {
  s.schema_id = parse_mapping(j.at("schema_id").get<std::string>());
  s.input_dimension = j.at("input_dimension").get<std::size_t>();
  s.kept_indices = j.at("kept_indices").get<std::vector<std::size_t>>();
  s.source = j.at("delta_digest").get<std::string>();
  for (std::size_t i = 0; i < s.kept_indices.size(); ++i) {
    if (s.kept_indices[i] >= s.input_dimension || (i > 0 && s.kept_indices[i] <= s.kept_indices[i - 1])) {
      throw Error(ErrorCode::kIntegrityError, "kept_indices must be sorted, unique and in range");
    }
  }
}

FeatureSelection pv_select(const std::vector<std::vector<double>>& deltas, MappingId schema,
                           std::size_t dimension, bool keep_all_on_empty) {
  if (deltas.empty() && !keep_all_on_empty) {
    throw Error(ErrorCode::kEmptyDeltaSet, "no perturbation vectors to select from");
  }
  FeatureSelection s;
  s.schema_id = schema;
  s.input_dimension = dimension;
  s.source = delta_digest(deltas);
  std::vector<char> keep(dimension, 1);
  for (const auto& d : deltas) {
    if (d.size() != dimension) throw Error(ErrorCode::kDimensionMismatch, "delta dimension differs");
    for (std::size_t i = 0; i < dimension; ++i) {
      if (d[i] < 0.0) keep[i] = 0;
    }
  }
  for (std::size_t i = 0; i < dimension; ++i) {
    if (keep[i]) s.kept_indices.push_back(i);
  }
  return s;
}

FeatureSelection pv_select(const std::vector<PerturbationVector>& deltas, bool keep_all_on_empty) {
  if (deltas.empty()) {
    if (!keep_all_on_empty) throw Error(ErrorCode::kEmptyDeltaSet, "no perturbation vectors to select from");
    throw Error(ErrorCode::kInvalidConfig, "an empty delta set carries no schema; pass it explicitly");
  }
  const MappingId schema = deltas.front().schema_id;
  for (const auto& d : deltas) {
    if (d.schema_id != schema) throw Error(ErrorCode::kDimensionMismatch, "deltas mix feature schemas");
  }
  return pv_select(delta_rows(deltas), schema, deltas.front().values.size(), keep_all_on_empty);
}

std::vector<double> apply_selection(std::span<const double> v, const FeatureSelection& s) {
  if (v.size() != s.input_dimension) throw Error(ErrorCode::kDimensionMismatch, "vector does not match selection");
  std::vector<double> out;
  out.reserve(s.kept_indices.size());
  for (auto i : s.kept_indices) out.push_back(v[i]);
  return out;
}

Matrix apply_selection(const Matrix& x, const FeatureSelection& s) {
  if (x.rows() > 0 && x.cols() != s.input_dimension) {
    throw Error(ErrorCode::kDimensionMismatch, "matrix does not match selection");
  }
  Matrix out(x.rows(), s.kept_indices.size());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t k = 0; k < s.kept_indices.size(); ++k) out(r, k) = x(r, s.kept_indices[k]);
  }
  return out;
}

TrainingSet apply_selection(const TrainingSet& t, const FeatureSelection& s) {
  TrainingSet out;
  out.x = apply_selection(t.x, s);
  out.y = t.y;
  out.schema_id = t.schema_id;
  return out;
}

SelectedDetector::SelectedDetector(FeatureSelection selection, std::unique_ptr<Detector> inner)
    : selection_(std::move(selection)), inner_(std::move(inner)) {
  if (inner_->info().input_dimension != selection_.kept_indices.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "inner detector does not match the selection size");
  }
  info_ = {"selected", selection_.schema_id, inner_->info().monotone_by_construction, selection_.input_dimension};
  threshold_ = inner_->threshold();
}

double SelectedDetector::score(std::span<const double> v) const {
  check_dimension(v);
  return inner_->score(apply_selection(v, selection_));
}

std::vector<double> SelectedDetector::score_batch(const Matrix& x) const {
  return inner_->score_batch(apply_selection(x, selection_));
}

json SelectedDetector::parameters() const { return json{{"selection", selection_}, {"inner", inner_->to_json()}}; }

// ---- decomposition ----------------------------------------------------------------

const std::vector<double>& FiniteDecomposition::h(std::span<const double> image) const {
  if (image.empty()) throw Error(ErrorCode::kInvalidConfig, "empty g-image");
  const double r = image[0];
  const bool constant = std::all_of(image.begin(), image.end(), [&](double x) { return x == r; });
  if (!constant || r < 0.0 || r != static_cast<double>(static_cast<std::size_t>(r)) ||
      static_cast<std::size_t>(r) >= h_table.size()) {
    throw Error(ErrorCode::kInvalidConfig, "vector is not in the image of g");
  }
  return domain.at(h_table[static_cast<std::size_t>(r)]);
}

FiniteDecomposition decompose_robust(const std::vector<std::vector<double>>& domain, const ScoreFunction& f) {
  if (domain.size() > kMaxDecompositionDomain) {
    throw Error(ErrorCode::kDomainTooLarge, "decomposition domain exceeds " +
                                                std::to_string(kMaxDecompositionDomain) + " points");
  }
  std::vector<double> scores;
  scores.reserve(domain.size());
  for (const auto& v : domain) scores.push_back(f(v));
  std::vector<double> distinct = scores;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  FiniteDecomposition d;
  d.domain = domain;
  d.h_table.assign(distinct.size(), domain.size());
  for (std::size_t i = 0; i < domain.size(); ++i) {
    const auto rank = static_cast<std::size_t>(
        std::lower_bound(distinct.begin(), distinct.end(), scores[i]) - distinct.begin());
    d.g_table.emplace_back(domain[i].size(), static_cast<double>(rank));
    if (d.h_table[rank] == domain.size()) d.h_table[rank] = i;
  }
  return d;
}

FiniteDecomposition decompose_robust(const std::vector<std::vector<double>>& domain, const Detector& f) {
  return decompose_robust(domain, [&](std::span<const double> v) { return f.score(v); });
}

DecompositionCheck verify_decomposition(const std::vector<std::vector<double>>& domain, const ScoreFunction& f,
                                        const FiniteDecomposition& d) {
  DecompositionCheck c;
  auto fail = [&](std::string w) {
    c.holds = false;
    c.witness = std::move(w);
    return c;
  };
  if (d.g_table.size() != domain.size()) return fail("g_table does not cover the domain");
  for (std::size_t i = 0; i < domain.size(); ++i) {
    const double direct = f(domain[i]);
    double via = 0.0;
    try {
      via = f(d.h(d.g(i)));
    } catch (const Error&) {
      return fail("g(domain[" + std::to_string(i) + "]) has no representative");
    }
    if (via != direct) return fail("f(h(g(v))) != f(v) at domain index " + std::to_string(i));
  }

  // Distinct g-images and the score of their representative.
  std::map<std::vector<double>, double> images;
  for (std::size_t i = 0; i < domain.size(); ++i) {
    if (!images.count(d.g(i))) images.emplace(d.g(i), f(d.h(d.g(i))));
  }
  for (const auto& [u1, s1] : images) {
    for (const auto& [u2, s2] : images) {
      bool leq = u1.size() == u2.size();
      for (std::size_t k = 0; leq && k < u1.size(); ++k) leq = u1[k] <= u2[k];
      if (leq && s1 > s2) {
        return fail("f(h(.)) decreases between ranks " + std::to_string(u1.empty() ? 0.0 : u1[0]) + " and " +
                    std::to_string(u2.empty() ? 0.0 : u2[0]));
      }
    }
  }
  return c;
}

std::vector<std::vector<double>> grid_domain(std::size_t dim, int levels) {
  std::vector<std::vector<double>> out;
  std::vector<int> cur(dim, 0);
  while (true) {
    out.emplace_back(cur.begin(), cur.end());
    std::size_t k = dim;
    while (k > 0 && cur[k - 1] == levels - 1) cur[--k] = 0;
    if (k == 0) break;
    ++cur[k - 1];
  }
  return out;
}

}  // namespace robustmal
