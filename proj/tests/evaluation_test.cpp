#include <gtest/gtest.h>

#include "robustmal/error.hpp"
#include "robustmal/evaluation.hpp"
#include "robustmal/pe.hpp"
#include "robustmal/random.hpp"
#include "test_support.hpp"

namespace robustmal {
namespace {

using testing::code_of;

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

AttackBudget budget(int steps = 10, std::size_t queries = 1000) {
  AttackBudget b;
  b.max_steps = steps;
  b.max_queries = queries;
  b.wall_clock_limit = 0.0;
  return b;
}

const std::vector<AttackStrategy> kBoth{AttackStrategy::kGreedy, AttackStrategy::kRandom};

std::vector<ProgramArtifact> malware_of(const std::vector<ProgramArtifact>& arts) {
  std::vector<ProgramArtifact> out;
  for (const auto& a : arts) {
    if (a.label == 1) out.push_back(a);
  }
  return out;
}

std::size_t manual_index(std::string_view name) { return feature_schema(MappingId::kManual).index_of(name); }

LinearDetector signature_detector(double weight = -1.0) {
  std::vector<double> w(kManualDimension, 0.0);
  w[manual_index("has_no_signature")] = weight;
  LinearDetector d(w, 0.5, MappingId::kManual);
  d.set_threshold(0.0);
  return d;
}

// 200-sample corpus split by family, as used by the experiment runner.
struct DeskSplit {
  Dataset train;
  Dataset test;
};

const DeskSplit& desk_split() {
  static const DeskSplit split = [] {
    auto [train, test] = family_split(generate_corpus(SyntheticSpec{}), 0.5, 1);
    return DeskSplit{std::move(train), std::move(test)};
  }();
  return split;
}

// ---- roc_auc ---------------------------------------------------------------------

TEST(RocAuc, Examples) {
  EXPECT_EQ(roc_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 1.0);
  EXPECT_EQ(roc_auc({0.3, 0.3, 0.3, 0.3}, {0, 1, 0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(roc_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}), 0.75);
  EXPECT_EQ(code_of([] { roc_auc({0.1, 0.2}, {1, 1}); }), ErrorCode::kSingleClass);
}

TEST(RocAuc, MatchesPairwiseOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.index(499);
    const bool ties = trial % 2 == 0;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = ties ? static_cast<double>(rng.index(5)) : rng.normal();
      y[i] = rng.bernoulli(0.4) ? 1 : 0;
    }
    y[0] = 0;
    y[1] = 1;
    ASSERT_NEAR(roc_auc(s, y), pairwise_auc(s, y), 1e-12) << trial;
  }
}

// ---- robustness ------------------------------------------------------------------

TEST(Robustness, MonotoneDetectorIsFullyRobust) {
  LinearDetector d(std::vector<double>(kManualDimension, 1.0), 0.0, MappingId::kManual);
  d.set_threshold(0.0);
  const auto rep = robustness(d, malware_of(testing::small_artifacts()), default_threat_model(), MappingId::kManual,
                              kBoth, budget(5, 200));
  ASSERT_TRUE(rep.robustness.has_value());
  EXPECT_EQ(*rep.robustness, 1.0);
  EXPECT_EQ(rep.n_evaded, 0u);
}

// Signed sample A is evaded in one step; sample B sits behind a cut on
// imports_total that only grows under the threat model.
class HalfEvadable : public Detector {
 public:
  explicit HalfEvadable(double cut) : cut_(cut) {
    info_.model_kind = "test";
    info_.input_dimension = kManualDimension;
  }
  double score(std::span<const double> v) const override {
    return 0.5 - v[manual_index("has_no_signature")] + (v[manual_index("imports_total")] >= cut_ ? 10.0 : 0.0);
  }
  nlohmann::json parameters() const override { return {}; }

 private:
  double cut_;
};

TEST(Robustness, ConstructedHalfEvadableFixture) {
  const auto mal = malware_of(desk_split().train.artifacts);
  const auto imports = [](const ProgramArtifact& a) {
    return features_of(a.bytes, MappingId::kManual)[manual_index("imports_total")];
  };
  const ProgramArtifact* a = nullptr;
  for (const auto& p : mal) {
    if (parse_pe(p.bytes).is_signed && (a == nullptr || imports(p) < imports(*a))) a = &p;
  }
  ASSERT_NE(a, nullptr);
  const double cut = imports(*a) + 11.0;
  const ProgramArtifact* b = nullptr;
  for (const auto& p : mal) {
    if (imports(p) >= cut) b = &p;
  }
  ASSERT_NE(b, nullptr);
  HalfEvadable d(cut);
  d.set_threshold(0.0);
  const auto rep = robustness(d, {*a, *b}, default_threat_model(), MappingId::kManual, kBoth, budget());
  EXPECT_EQ(rep.n_detected, 2u);
  EXPECT_EQ(*rep.robustness, 0.5);
  EXPECT_EQ(rep.evasions_by_strategy[0], (std::pair<std::string, std::size_t>{"greedy", 1}));
}

TEST(Robustness, ZeroBudgetIsFullyRobust) {
  const auto d = signature_detector();
  const auto rep = robustness(d, malware_of(testing::small_artifacts()), default_threat_model(), MappingId::kManual,
                              kBoth, budget(0, 1));
  EXPECT_EQ(*rep.robustness, 1.0);
}

TEST(Robustness, Errors) {
  const auto d = signature_detector();
  EXPECT_EQ(code_of([&] { robustness(d, {}, default_threat_model(), MappingId::kManual, kBoth, budget()); }),
            ErrorCode::kInvalidConfig);
  LinearDetector quiet(std::vector<double>(kManualDimension, 0.0), -1.0, MappingId::kManual);
  quiet.set_threshold(0.0);
  EXPECT_EQ(code_of([&] {
              robustness(quiet, malware_of(testing::small_artifacts()), default_threat_model(), MappingId::kManual,
                         kBoth, budget());
            }),
            ErrorCode::kNoDetectedMalware);
}

// ---- certification ---------------------------------------------------------------

TEST(Certify, MonotoneGbtOnManualFeatures) {
  const auto arts = testing::small_artifacts();
  GbtConfig c;
  c.monotone = true;
  c.trees = 10;
  const auto d = train_gbt(build_training_set(arts, MappingId::kManual), c);
  const auto rep = certify_detector(*d, default_threat_model(), MappingId::kManual, arts, CertifyOptions{});
  EXPECT_EQ(rep.status, CertificateStatus::kCertified);
  EXPECT_EQ(rep.method, "monotone");
  EXPECT_GT(rep.n_deltas, 0u);
}

TEST(Certify, DepthZeroCertifiesAnything) {
  const auto d = signature_detector();
  CertifyOptions o;
  o.depth = 0;
  const auto rep = certify_detector(d, default_threat_model(), MappingId::kManual, testing::small_artifacts(), o);
  EXPECT_EQ(rep.status, CertificateStatus::kCertified);
  EXPECT_EQ(rep.method, "depth_zero");
}

TEST(Certify, BoundedSearchFindsSignatureFlip) {
  const auto d = signature_detector();
  const auto rep =
      certify_detector(d, default_threat_model(), MappingId::kManual, testing::small_artifacts(), CertifyOptions{});
  ASSERT_EQ(rep.status, CertificateStatus::kCounterexample);
  EXPECT_EQ(rep.method, "bounded_search");
  ASSERT_EQ(rep.path.size(), 1u);
  EXPECT_EQ(default_threat_model().transformations[rep.path[0]].kind, TransformKind::kRemoveSignature);
  EXPECT_EQ(rep.initial_score, 0.5);
  EXPECT_EQ(rep.final_score, -0.5);
}

TEST(Certify, BoundedSearchWithoutFlipCertifiesToDepth) {
  // Not monotone, but the negative weight is too small to matter.
  const auto d = signature_detector(-1e-9);
  const auto rep =
      certify_detector(d, default_threat_model(), MappingId::kManual, testing::small_artifacts(), CertifyOptions{});
  EXPECT_EQ(rep.status, CertificateStatus::kCertified);
  EXPECT_EQ(rep.method, "bounded_search");
}

TEST(Certify, ExtraNegativeDeltaRevokesMonotoneCertificate) {
  LinearDetector d(std::vector<double>(kManualDimension, 1.0), 0.0, MappingId::kManual);
  d.set_threshold(0.0);
  std::vector<double> neg(kManualDimension, 0.0);
  neg[3] = -1.0;
  const auto arts = testing::small_artifacts();
  const auto rep = certify_detector(d, default_threat_model(), MappingId::kManual, arts, CertifyOptions{}, {neg});
  EXPECT_EQ(rep.method, "bounded_search");
  EXPECT_NE(rep.detail.find("-1"), std::string::npos);
}

// Every benign sample is a malware image with an overlay and the goodware
// strings added, so those two edits are the only class signal and two steps
// carry malware onto a benign training point.
std::vector<ProgramArtifact> planted_flip_fixture() {
  const auto& m = default_threat_model();
  std::vector<ProgramArtifact> out;
  for (const auto& a : testing::small_artifacts()) {
    if (a.label != 1) continue;
    out.push_back(a);
    ProgramArtifact b = a;
    b.id = a.id + "_benign";
    b.label = 0;
    b.family = kBenignFamily;
    for (const auto& t : m.transformations) {
      if (t.kind == TransformKind::kAppendOverlay || t.kind == TransformKind::kAddStrings) {
        b.bytes = apply_transformation(b.bytes, t);
      }
    }
    out.push_back(std::move(b));
  }
  return out;
}

TEST(Certify, BaselineMlpOnCompositeHasShallowCounterexample) {
  const auto arts = planted_flip_fixture();
  ModelSpec spec;
  spec.mapping = MappingId::kComposite;
  const auto d = train_detector(spec, arts, default_threat_model(), TrainOptions{});
  CertifyOptions c;
  c.depth = 3;
  const auto rep = certify_detector(*d, default_threat_model(), MappingId::kComposite, arts, c);
  ASSERT_EQ(rep.status, CertificateStatus::kCounterexample);
  EXPECT_EQ(rep.method, "bounded_search");
  EXPECT_GE(rep.path.size(), 1u);
  EXPECT_LE(rep.path.size(), 3u);
  EXPECT_LT(rep.final_score, d->threshold());
  EXPECT_GE(rep.initial_score, d->threshold());
  // The reported path replays to the reported score.
  const ProgramArtifact* p = nullptr;
  for (const auto& a : arts) {
    if (a.id == rep.sample_id) p = &a;
  }
  ASSERT_NE(p, nullptr);
  const auto bytes = replay_sequence(p->bytes, default_threat_model(), rep.path);
  EXPECT_EQ(d->score(features_of(bytes, MappingId::kComposite)), rep.final_score);
}

TEST(Certify, ErdaltOnCompositeIsCertifiedLinearly) {
  const auto& split = desk_split();
  ModelSpec spec;
  spec.model = "erdalt";
  spec.mapping = MappingId::kComposite;
  spec.erdalt.margin = 0.0;
  spec.erdalt.lambda3 = 1.0;
  spec.erdalt.epochs = 40;
  spec.erdalt.refit_epochs = 30;
  TrainOptions o;
  const auto d = train_detector(spec, split.train.artifacts, default_threat_model(), o);
  ASSERT_NE(dynamic_cast<const ErdaltDetector*>(d.get()), nullptr);
  const auto rep =
      certify_detector(*d, default_threat_model(), MappingId::kComposite, split.train.artifacts, CertifyOptions{});
  EXPECT_EQ(rep.status, CertificateStatus::kCertified);
  EXPECT_EQ(rep.method, "erdalt_linear");
}

TEST(Certify, AttackPathDeltasAreCollectedDeltas) {
  const auto d = signature_detector();
  const auto arts = testing::small_artifacts();
  const auto res = attack_suite(d, malware_of(arts), default_threat_model(), MappingId::kManual,
                                {AttackStrategy::kGreedy}, budget());
  const auto path = attack_path_deltas(res, arts, default_threat_model(), MappingId::kManual);
  ASSERT_FALSE(path.empty());
  const auto collected = delta_rows(collect_delta_set(default_threat_model(), arts, MappingId::kManual));
  for (const auto& p : path) {
    EXPECT_NE(std::find(collected.begin(), collected.end(), p), collected.end());
  }
}

// ---- training ----------------------------------------------------------------------

TEST(TrainDetector, PvSelectWrapsTheModel) {
  ModelSpec spec;
  spec.mapping = MappingId::kComposite;
  spec.protection = Protection::kPvSelect;
  spec.mlp.epochs = 20;
  const auto d = train_detector(spec, testing::small_artifacts(), default_threat_model(), TrainOptions{});
  const auto* s = dynamic_cast<const SelectedDetector*>(d.get());
  ASSERT_NE(s, nullptr);
  EXPECT_LT(s->selection().kept_indices.size(), kCompositeDimension);
  EXPECT_EQ(s->threshold(), s->inner().threshold());
}

TEST(TrainDetector, AdversarialTrainingRuns) {
  ModelSpec spec;
  spec.mapping = MappingId::kComposite;
  spec.protection = Protection::kAdversarial;
  spec.mlp.epochs = 20;
  TrainOptions o;
  o.budget = budget(3, 50);
  const auto d = train_detector(spec, testing::small_artifacts(), default_threat_model(), o);
  EXPECT_EQ(d->info().model_kind, "mlp");
  const auto again = train_detector(spec, testing::small_artifacts(), default_threat_model(), o);
  EXPECT_EQ(d->to_json().dump(), again->to_json().dump());
}

TEST(TrainDetector, RejectsBadCombinations) {
  ModelSpec spec;
  spec.model = "gbt";
  spec.protection = Protection::kErdalt;
  EXPECT_EQ(code_of([&] { spec.validate(); }), ErrorCode::kInvalidConfig);
  spec = ModelSpec{};
  spec.model = "svm";
  EXPECT_EQ(code_of([&] { spec.validate(); }), ErrorCode::kInvalidConfig);
  spec = ModelSpec{};
  spec.knn_k = 4;
  EXPECT_EQ(code_of([&] { spec.validate(); }), ErrorCode::kInvalidConfig);
  EXPECT_EQ(code_of([] { parse_protection("magic"); }), ErrorCode::kInvalidConfig);
}

// ---- experiments -------------------------------------------------------------------

nlohmann::json tiny_experiment() {
  return nlohmann::json::parse(R"({
    "corpus": {"spec": {"n_families_malicious": 6, "samples_per_family": 3, "n_benign": 18}},
    "seeds": [3],
    "budget": {"max_steps": 4, "max_queries": 60, "wall_clock_limit": 0},
    "rows": [{"name": "knn", "model": "knn", "mapping": "manual", "protection": "none", "knn_k": 3}]
  })");
}

TEST(Experiment, OneRowGivesOneReport) {
  const auto report = run_experiment(tiny_experiment().get<ExperimentConfig>());
  ASSERT_EQ(report.rows.size(), 1u);
  const auto& r = report.rows[0];
  EXPECT_EQ(r.name, "knn");
  EXPECT_EQ(r.seed, 3u);
  EXPECT_GE(r.roc_auc, 0.0);
  EXPECT_LE(r.roc_auc, 1.0);
  if (r.robustness) EXPECT_EQ(*r.robustness, 1.0 - double(r.n_evaded) / double(r.n_detected));
  EXPECT_NE(r.certificate.status, CertificateStatus::kNotAttempted);
  EXPECT_FALSE(report.table().empty());
}

TEST(Experiment, EvasionLongerThanSearchDepthKeepsBoundedCertificate) {
  ExperimentConfig c;
  c.corpus_spec = SyntheticSpec{};
  c.budget.wall_clock_limit = 0.0;
  c.certify.depth = 0;
  ModelSpec s;
  s.name = "mlp";
  s.mapping = MappingId::kComposite;
  c.rows = {s};
  const auto r = run_experiment(c).rows.at(0);
  ASSERT_GE(r.n_evaded, 1u);
  EXPECT_EQ(r.certificate.status, CertificateStatus::kCertified);
  EXPECT_EQ(r.certificate.method, "depth_zero");
  EXPECT_EQ(r.cross_check, "beyond_depth");
}

TEST(Experiment, ReportIsReproducible) {
  auto j = tiny_experiment();
  j["rows"].push_back({{"name", "mono"}, {"model", "mlp_monotone"}, {"mapping", "composite"},
                       {"mlp", {{"epochs", 15}}}});
  const auto c = j.get<ExperimentConfig>();
  const auto a = run_experiment(c).to_json().dump();
  const auto b = run_experiment(c).to_json().dump();
  EXPECT_EQ(a, b);
}

TEST(Experiment, ConfigRoundTripKeepsDigest) {
  const auto c = tiny_experiment().get<ExperimentConfig>();
  const nlohmann::json j = c;
  EXPECT_EQ(config_digest(j.get<ExperimentConfig>()), config_digest(c));
  auto other = tiny_experiment();
  other["seeds"] = {4};
  EXPECT_NE(config_digest(other.get<ExperimentConfig>()), config_digest(c));
}

TEST(Experiment, ConfigValidation) {
  auto j = tiny_experiment();
  j["rows"] = nlohmann::json::array();
  EXPECT_EQ(code_of([&] { j.get<ExperimentConfig>(); }), ErrorCode::kInvalidConfig);
  j = tiny_experiment();
  j["corpus"]["path"] = "/tmp/x";
  EXPECT_EQ(code_of([&] { j.get<ExperimentConfig>(); }), ErrorCode::kInvalidConfig);
  j = tiny_experiment();
  j["rows"][0]["mapping"] = "ember";
  EXPECT_EQ(code_of([&] { j.get<ExperimentConfig>(); }), ErrorCode::kUnknownMapping);
  j = tiny_experiment();
  j["strategies"] = {"genetic"};
  EXPECT_EQ(code_of([&] { j.get<ExperimentConfig>(); }), ErrorCode::kInvalidConfig);
  j = tiny_experiment();
  j.erase("corpus");
  EXPECT_EQ(code_of([&] { j.get<ExperimentConfig>(); }), ErrorCode::kInvalidConfig);
}

TEST(Experiment, NullRobustnessSerializesAsNull) {
  EvalRow r;
  EXPECT_TRUE(nlohmann::json(r)["robustness"].is_null());
  r.robustness = 0.25;
  EXPECT_EQ(nlohmann::json(r)["robustness"], 0.25);
}

TEST(Ablation, FourArmsWithTheirSettings) {
  auto j = tiny_experiment();
  j.erase("rows");
  const auto c = ablation_config(j);
  ASSERT_EQ(c.rows.size(), 4u);
  EXPECT_EQ(c.rows[0].name, "baseline");
  EXPECT_EQ(c.rows[0].model, "mlp");
  EXPECT_EQ(c.rows[1].name, "+linear");
  EXPECT_FALSE(c.rows[1].erdalt.monotone_upper);
  EXPECT_EQ(c.rows[1].erdalt.repair, RepairMode::kOff);
  EXPECT_EQ(c.rows[2].model, "mlp_monotone");
  EXPECT_EQ(c.rows[3].name, "full");
  EXPECT_TRUE(c.rows[3].erdalt.monotone_upper);
  EXPECT_EQ(c.rows[3].erdalt.repair, RepairMode::kZeroRows);
  for (const auto& r : c.rows) EXPECT_EQ(r.mapping, MappingId::kComposite);
}

TEST(CorpusSelfCheck, DepthTwoGbtSeparatesHeldOutFamilies) {
  EXPECT_GE(corpus_self_check(SyntheticSpec{}), 0.9);
}

}  // namespace
}  // namespace robustmal
