#include <gtest/gtest.h>

#include <cmath>

#include "robustmal/erdalt.hpp"
#include "robustmal/error.hpp"
#include "robustmal/model_io.hpp"
#include "robustmal/random.hpp"
#include "robustmal/selection.hpp"
#include "robustmal/threat_model.hpp"
#include "test_support.hpp"

namespace robustmal {
namespace {

using testing::code_of;
using Rows = std::vector<std::vector<double>>;

ErdaltDetector fixture(Matrix w, std::uint64_t seed = 3) {
  const std::size_t dim = w.rows();
  return ErdaltDetector(Scaler::identity(dim), std::move(w), MlpNet::init(dim, {4}, true, seed),
                        MappingId::kManual, true);
}

// Independent brute-force scan: most negative (W delta)_i below -eps, first
// (delta, row) on ties.
LinearCertificate certify_oracle(const Matrix& w, const Rows& deltas, double eps) {
  LinearCertificate c;
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    for (std::size_t i = 0; i < w.rows(); ++i) {
      double v = 0.0;
      for (std::size_t j = 0; j < w.cols(); ++j) v += w(i, j) * deltas[k][j];
      if (v < -eps && (c.certified || v < c.value)) {
        c.certified = false;
        c.value = v;
        c.delta_index = k;
        c.coordinate = i;
      }
    }
  }
  return c;
}

TEST(ErdaltLoss, HingeInactiveAboveMargin) {
  const auto d = fixture(Matrix::identity(3));
  ErdaltConfig c;
  const Matrix x = Matrix::from_rows({{1, 2, 3}});
  EXPECT_EQ(erdalt_loss(d, x, {1}, {{0.5, 0.02, 1.0}, {0.01, 0.01, 0.01}}, c).l2, 0.0);
}

TEST(ErdaltLoss, OneViolatingCoordinate) {
  const auto d = fixture(Matrix::identity(3));
  ErdaltConfig c;
  c.margin = 0.0;
  const Matrix x = Matrix::from_rows({{1, 2, 3}});
  EXPECT_DOUBLE_EQ(erdalt_loss(d, x, {1}, {{-1, 0, 0}, {1, 1, 1}}, c).l2, 0.5);
}

TEST(ErdaltLoss, TermsMatchDirectComputation) {
  Matrix w = Matrix::identity(3);
  EXPECT_EQ(erdalt_loss(fixture(w), Matrix::from_rows({{0, 0, 0}}), {0}, {{1, 1, 1}}, {}).l3, 0.0);
  w(0, 2) = -0.25;
  w(1, 0) = 0.5;
  const auto d = fixture(w);
  ErdaltConfig c;
  c.lambda1 = 2.0;
  c.lambda2 = 3.0;
  c.lambda3 = 0.5;
  const Matrix x = Matrix::from_rows({{1, 0, 2}, {0.5, -1, 0}});
  const std::vector<int> y{1, 0};
  const Rows deltas{{1, 0, 0}, {0, 0, 1}};
  const auto l = erdalt_loss(d, x, y, deltas, c);
  const double l1 = 0.5 * (bce_with_logit(d.score(x.row(0)), 1) + bce_with_logit(d.score(x.row(1)), 0));
  // Rows of W delta: (1, 0.5, 0) and (-0.25, 0, 1); margin 0.01.
  const double l2 = ((0.0 + 0.0 + 0.01) + (0.26 + 0.01 + 0.0)) / 2.0;
  EXPECT_NEAR(l.l1, l1, 1e-15);
  EXPECT_NEAR(l.l2, l2, 1e-15);
  EXPECT_DOUBLE_EQ(l.l3, 0.75);
  EXPECT_NEAR(l.total, 2.0 * l1 + 3.0 * l2 + 0.5 * 0.75, 1e-14);
  EXPECT_EQ(code_of([&] { erdalt_loss(d, x, y, {}, c); }), ErrorCode::kEmptyDeltaSet);
}

TEST(CertifyLinear, IdentityOnNonNegativeDeltas) {
  EXPECT_TRUE(certify_linear(Matrix::identity(3), {{0, 1, 2}, {0, 0, 0}}).certified);
}

TEST(CertifyLinear, NegativeEntryIsCounterexample) {
  const auto c = certify_linear(Matrix::identity(3), {{1, 0, 0}, {0, -1, 4}});
  ASSERT_FALSE(c.certified);
  EXPECT_EQ(c.delta_index, 1u);
  EXPECT_EQ(c.coordinate, 1u);
  EXPECT_EQ(c.value, -1.0);
  EXPECT_EQ(c.delta, (std::vector<double>{0, -1, 4}));
}

TEST(CertifyLinear, CancellingCountersCertifyAtBoundary) {
  // Row 0 adds the CreateFile and CreateFileEx counters; substitution moves
  // one call from the first to the second.
  Matrix w(2, 2);
  w(0, 0) = 1.0;
  w(0, 1) = 1.0;
  const auto c = certify_linear(w, {{-1, 1}});
  EXPECT_TRUE(c.certified);
  EXPECT_FALSE(certify_linear(Matrix::identity(2), {{-1, 1}}).certified);
}

TEST(CertifyLinear, EpsilonToleratesSmallViolations) {
  EXPECT_TRUE(certify_linear(Matrix::identity(2), {{-1e-3, 1}}, 1e-2).certified);
  EXPECT_FALSE(certify_linear(Matrix::identity(2), {{-1e-3, 1}}, 0.0).certified);
}

TEST(CertifyLinear, AgreesWithBruteForce) {
  Rng rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t dim = 1 + rng.index(6);
    Matrix w(dim, dim);
    for (auto& v : w.data()) v = rng.bernoulli(0.3) ? 0.0 : rng.uniform(-0.2, 1.0);
    Rows deltas(1 + rng.index(8), std::vector<double>(dim));
    for (auto& d : deltas) {
      for (auto& v : d) v = rng.bernoulli(0.5) ? 0.0 : static_cast<double>(rng.integer(-2, 5));
    }
    const double eps = rng.bernoulli(0.5) ? 0.0 : 0.1;
    const auto a = certify_linear(w, deltas, eps);
    const auto b = certify_oracle(w, deltas, eps);
    ASSERT_EQ(a.certified, b.certified);
    if (!a.certified) {
      EXPECT_EQ(a.delta_index, b.delta_index);
      EXPECT_EQ(a.coordinate, b.coordinate);
      EXPECT_EQ(a.value, b.value);
    }
  }
}

TEST(RepairLinear, CertifiedMatrixIsUnchanged) {
  const Matrix w = Matrix::from_rows({{1, 0.5}, {0, 2}});
  const auto r = repair_linear(w, {{1, 0}, {0, 3}});
  EXPECT_EQ(r.w, w);
  EXPECT_TRUE(r.zeroed_rows.empty());
}

TEST(RepairLinear, ZeroesExactlyTheViolatingRow) {
  const Matrix w = Matrix::from_rows({{1, 0, 0}, {0.5, -1, 0}, {0, 0, 1}});
  const auto r = repair_linear(w, {{0, 1, 0}, {1, 0, 2}});
  EXPECT_EQ(r.zeroed_rows, std::vector<std::size_t>{1});
  EXPECT_EQ(r.w, Matrix::from_rows({{1, 0, 0}, {0, 0, 0}, {0, 0, 1}}));
  EXPECT_FALSE(r.all_rows_zeroed);
  EXPECT_TRUE(repair_linear(Matrix::identity(1), {{-1}}).all_rows_zeroed);
}

TEST(RepairLinear, RepairedMatrixAlwaysCertifies) {
  Rng rng(23);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t dim = 1 + rng.index(6);
    Matrix w(dim, dim);
    for (auto& v : w.data()) v = rng.uniform(-1.0, 1.0);
    Rows deltas(1 + rng.index(6), std::vector<double>(dim));
    for (auto& d : deltas) {
      for (auto& v : d) v = rng.uniform(-1.0, 2.0);
    }
    const auto r = repair_linear(w, deltas);
    EXPECT_TRUE(certify_linear(r.w, deltas).certified);
    for (std::size_t i = 0; i < dim; ++i) {
      const bool zeroed = std::find(r.zeroed_rows.begin(), r.zeroed_rows.end(), i) != r.zeroed_rows.end();
      for (std::size_t j = 0; j < dim; ++j) EXPECT_EQ(r.w(i, j), zeroed ? 0.0 : w(i, j));
    }
  }
}

TEST(RepairLinear, IdentityOnCompositeZeroesThePvComplement) {
  const auto deltas = collect_delta_set(default_threat_model(), testing::small_artifacts(), MappingId::kComposite);
  const auto rows = delta_rows(deltas);
  const auto r = repair_linear(Matrix::identity(kCompositeDimension), rows);
  const auto sel = pv_select(deltas);
  std::vector<std::size_t> complement;
  for (std::size_t i = 0; i < kCompositeDimension; ++i) {
    if (!std::binary_search(sel.kept_indices.begin(), sel.kept_indices.end(), i)) complement.push_back(i);
  }
  EXPECT_FALSE(complement.empty());
  EXPECT_EQ(r.zeroed_rows, complement);
}

TEST(ErdaltScore, IdentityLayerEqualsUpperNetwork) {
  const MlpNet upper = MlpNet::init(3, {5}, true, 4);
  Scaler s;
  s.mean = {1, 2, 3};
  s.scale = {2, 0.5, 1};
  const ErdaltDetector e(s, Matrix::identity(3), upper, MappingId::kManual, true);
  const MlpDetector m(upper, s, MappingId::kManual, true);
  for (const std::vector<double>& v : {std::vector<double>{0, 0, 0}, {3, -1, 7}, {1.5, 2.5, 0.25}}) {
    EXPECT_EQ(e.score(v), m.score(v));
  }
}

TEST(ErdaltScore, ZeroLayerIsConstant) {
  const auto e = fixture(Matrix(3, 3));
  EXPECT_EQ(e.score(std::vector<double>{0, 0, 0}), e.score(std::vector<double>{5, -2, 9}));
  EXPECT_EQ(code_of([&] { e.score(std::vector<double>{1, 2}); }), ErrorCode::kDimensionMismatch);
}

TEST(ErdaltScore, BatchAgreesWithSingle) {
  Matrix w = Matrix::identity(3);
  w(0, 1) = 0.3;
  const auto e = fixture(w);
  const Matrix x = Matrix::from_rows({{1, 2, 3}, {-1, 0.5, 2}});
  const auto b = e.score_batch(x);
  EXPECT_NEAR(b[0], e.score(x.row(0)), 1e-12);
  EXPECT_NEAR(b[1], e.score(x.row(1)), 1e-12);
}

TrainingSet separable_toy(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  TrainingSet t;
  t.x.resize(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (auto& v : t.x.row(i)) s += (v = rng.uniform());
    t.y.push_back(s > 0.5 * static_cast<double>(dim) ? 1 : 0);
  }
  return t;
}

TEST(ErdaltTraining, BasisDeltasEndWithZeroHinge) {
  const auto t = separable_toy(200, 3, 5);
  const Rows basis{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  ErdaltConfig c;
  c.margin = 0.0;
  c.repair = RepairMode::kOff;
  c.epochs = 100;
  const auto m = train_erdalt(t, basis, c);
  EXPECT_TRUE(certify_linear(m->effective_weights(), basis).certified);
  EXPECT_LT(erdalt_loss(*m, t.x, t.y, basis, c).l2, 1e-6);
  EXPECT_TRUE(m->certified_against().has_value());
}

TEST(ErdaltTraining, LargeDiagonalPenaltyClearsOffDiagonal) {
  const auto t = separable_toy(200, 4, 6);
  ErdaltConfig c;
  c.lambda3 = 1000.0;
  c.repair = RepairMode::kOff;
  c.epochs = 40;
  const auto m = train_erdalt(t, {{1, 0, 0, 0}, {0, 1, -1, 0}}, c);
  double off = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) off += i == j ? 0.0 : std::fabs(m->w()(i, j));
  }
  EXPECT_LT(off, 1e-3);
}

TEST(ErdaltTraining, RejectsEmptyDeltasAndSingleClass) {
  auto t = separable_toy(50, 2, 7);
  EXPECT_EQ(code_of([&] { train_erdalt(t, {}, {}); }), ErrorCode::kEmptyDeltaSet);
  EXPECT_EQ(code_of([&] { train_erdalt(t, {{1.0}}, {}); }), ErrorCode::kDimensionMismatch);
  std::fill(t.y.begin(), t.y.end(), 0);
  EXPECT_EQ(code_of([&] { train_erdalt(t, {{1, 0}}, {}); }), ErrorCode::kDegenerateDataset);
  ErdaltConfig bad;
  bad.lambda1 = 0.0;
  EXPECT_EQ(code_of([&] { bad.validate(); }), ErrorCode::kInvalidConfig);
}

ErdaltConfig composite_config() {
  ErdaltConfig c;
  c.margin = 0.0;
  c.lambda3 = 1.0;
  c.epochs = 40;
  c.refit_epochs = 30;
  return c;
}

struct CompositeModel {
  TrainingSet train;
  Rows deltas;
  std::unique_ptr<ErdaltDetector> model;
};

const CompositeModel& composite_model() {
  static const CompositeModel m = [] {
    CompositeModel out;
    const auto arts = testing::small_artifacts();
    out.train = build_training_set(arts, MappingId::kComposite);
    out.deltas = delta_rows(collect_delta_set(default_threat_model(), arts, MappingId::kComposite));
    out.model = train_erdalt(out.train, out.deltas, composite_config());
    return out;
  }();
  return m;
}

TEST(ErdaltTraining, RepairedCompositeModelCertifies) {
  const auto& m = composite_model();
  EXPECT_TRUE(certify_linear(m.model->effective_weights(), m.deltas).certified);
  EXPECT_EQ(m.model->certified_against(), delta_digest(m.deltas));
  EXPECT_FALSE(m.model->repair_log().empty());
}

TEST(ErdaltTraining, TelescopingCompositionsNeverLowerTheScore) {
  const auto& m = composite_model();
  Rng rng(29);
  std::size_t violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto base = m.train.x.row(rng.index(m.train.size()));
    std::vector<double> v(base.begin(), base.end());
    const double s0 = m.model->score(v);
    const std::size_t len = 1 + rng.index(10);
    for (std::size_t k = 0; k < len; ++k) {
      const auto& d = m.deltas[rng.index(m.deltas.size())];
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += d[i];
      if (m.model->score(v) < s0 - 1e-9) ++violations;
    }
  }
  EXPECT_EQ(violations, 0u);
}

TEST(ErdaltTraining, DeterministicAndRoundTrips) {
  const auto& m = composite_model();
  const auto again = train_erdalt(m.train, m.deltas, composite_config());
  const auto text = m.model->to_json().dump();
  EXPECT_EQ(again->to_json().dump(), text);
  const auto back = load_detector(nlohmann::json::parse(text));
  EXPECT_EQ(back->to_json().dump(), text);
  const auto& e = dynamic_cast<const ErdaltDetector&>(*back);
  EXPECT_EQ(e.certified_against(), m.model->certified_against());
  EXPECT_EQ(e.repair_log(), m.model->repair_log());
  for (std::size_t i = 0; i < m.train.size(); ++i) ASSERT_EQ(back->score(m.train.x.row(i)), m.model->score(m.train.x.row(i)));
}

TEST(ErdaltTraining, UnconstrainedUpperNeverCertifies) {
  const auto t = separable_toy(100, 3, 8);
  ErdaltConfig c;
  c.monotone_upper = false;
  c.repair = RepairMode::kOff;
  c.epochs = 10;
  const auto m = train_erdalt(t, {{1, 0, 0}}, c);
  EXPECT_EQ(m->info().model_kind, "erdalt_linear");
  EXPECT_FALSE(m->certified_against().has_value());
}

TEST(ErdaltTraining, ConfigJsonRoundTrip) {
  ErdaltConfig c = composite_config();
  c.hidden = {7, 3};
  c.repair = RepairMode::kOff;
  const nlohmann::json j = c;
  const auto back = j.get<ErdaltConfig>();
  EXPECT_EQ(nlohmann::json(back).dump(), j.dump());
  EXPECT_EQ(code_of([] { nlohmann::json{{"repair", "project"}}.get<ErdaltConfig>(); }), ErrorCode::kInvalidConfig);
}

}  // namespace
}  // namespace robustmal
