#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "robustmal/detectors.hpp"
#include "robustmal/threat_model.hpp"

namespace robustmal {

struct FeatureSelection {
  std::vector<std::size_t> kept_indices;  // sorted, unique
  std::string source;                     // delta_digest of the delta set
  MappingId schema_id = MappingId::kManual;
  std::size_t input_dimension = 0;

  bool operator==(const FeatureSelection&) const = default;
};

void to_json(nlohmann::json& j, const FeatureSelection& s);
void from_json(const nlohmann::json& j, FeatureSelection& s);

// Keeps every coordinate i with delta_i >= 0 for all deltas. An empty set
// throws kEmptyDeltaSet unless keep_all_on_empty is set, in which case every
// coordinate of `dimension` is kept.
FeatureSelection pv_select(const std::vector<std::vector<double>>& deltas, MappingId schema,
                           std::size_t dimension, bool keep_all_on_empty = false);
// Schema and dimension taken from the vectors; all must share one schema.
FeatureSelection pv_select(const std::vector<PerturbationVector>& deltas, bool keep_all_on_empty = false);

std::vector<double> apply_selection(std::span<const double> v, const FeatureSelection& s);
Matrix apply_selection(const Matrix& x, const FeatureSelection& s);
TrainingSet apply_selection(const TrainingSet& t, const FeatureSelection& s);

// Detector over the full schema that scores the kept coordinates with an
// inner detector trained on the reduced vectors.
class SelectedDetector : public Detector {
 public:
  SelectedDetector(FeatureSelection selection, std::unique_ptr<Detector> inner);

  double score(std::span<const double> v) const override;
  std::vector<double> score_batch(const Matrix& x) const override;
  nlohmann::json parameters() const override;

  const FeatureSelection& selection() const { return selection_; }
  const Detector& inner() const { return *inner_; }

 private:
  FeatureSelection selection_;
  std::unique_ptr<Detector> inner_;
};

// ---- finite decomposition ---------------------------------------------------------

using ScoreFunction = std::function<double(std::span<const double>)>;

inline constexpr std::size_t kMaxDecompositionDomain = 100000;

// g sends each domain point to the constant vector (r, ..., r) where r is the
// rank of its score among the distinct scores (0 = lowest); h sends rank r to
// the first domain point with that rank.
struct FiniteDecomposition {
  std::vector<std::vector<double>> domain;
  std::vector<std::vector<double>> g_table;  // parallel to domain
  std::vector<std::size_t> h_table;         // rank -> domain index

  const std::vector<double>& g(std::size_t domain_index) const { return g_table.at(domain_index); }
  // Representative for a g-image; throws kInvalidConfig if it is not one.
  const std::vector<double>& h(std::span<const double> image) const;
};

// Throws kDomainTooLarge beyond kMaxDecompositionDomain points.
FiniteDecomposition decompose_robust(const std::vector<std::vector<double>>& domain, const ScoreFunction& f);
FiniteDecomposition decompose_robust(const std::vector<std::vector<double>>& domain, const Detector& f);

struct DecompositionCheck {
  bool holds = true;
  std::string witness;  // empty when holds
};

// (a) f(v) == f(h(g(v))) exactly at every domain point; (b) for every pair of
// g-images u1 <= u2 coordinate-wise, f(h(u1)) <= f(h(u2)).
DecompositionCheck verify_decomposition(const std::vector<std::vector<double>>& domain, const ScoreFunction& f,
                                        const FiniteDecomposition& d);

// Every point of {0, ..., levels - 1}^dim in lexicographic order.
std::vector<std::vector<double>> grid_domain(std::size_t dim, int levels);

}  // namespace robustmal
