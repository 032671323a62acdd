#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "robustmal/error.hpp"
#include "robustmal/pe_image.hpp"
#include "robustmal/threat_model.hpp"
#include "test_support.hpp"

namespace robustmal {
namespace {

std::size_t idx(MappingId m, std::string_view name) { return feature_schema(m).index_of(name); }

ProgramArtifact artifact_of(const ImageModel& m, int label = 1) {
  return {"t", serialize(m), label, 0};
}

// Offset of the first differing byte, or -1 when equal.
long first_difference(const Bytes& a, const Bytes& b) {
  const auto n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i] != b[i]) return static_cast<long>(i);
  }
  return a.size() == b.size() ? -1 : static_cast<long>(n);
}

using testing::code_of;

TEST(Transformations, RemoveSignatureTouchesOneFeature) {
  const auto p = artifact_of(testing::signed_model_with_imports());
  const auto d = perturbation_vector(make_remove_signature(), p, MappingId::kManual);
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    EXPECT_EQ(d.values[i], i == idx(MappingId::kManual, "has_no_signature") ? 1.0 : 0.0)
        << feature_schema(MappingId::kManual).names[i];
  }
  const auto after = apply_transformation(p, make_remove_signature());
  EXPECT_FALSE(parse_pe(after.bytes).is_signed);
  EXPECT_EQ(after.label, p.label);
  EXPECT_EQ(code_of([&] { apply_transformation(after, make_remove_signature()); }),
            ErrorCode::kNotApplicable);
}

TEST(Transformations, AddImportAppends) {
  const auto t = make_add_import("kernel32", "Sleep");
  const auto p = artifact_of(testing::signed_model_with_imports());
  const auto twice = apply_transformation(apply_transformation(p, t), t);
  const auto v = parse_pe(twice.bytes);
  const auto sleeps = std::count_if(v.imports.begin(), v.imports.end(),
                                    [](const ImportEntry& e) { return e.function == "Sleep"; });
  EXPECT_EQ(sleeps, 2);
  EXPECT_TRUE(v.is_signed);
}

TEST(Transformations, AddImportCreatesImportSection) {
  const auto p = artifact_of(minimal_image_model());
  const auto v = parse_pe(apply_transformation(p, make_add_import("kernel32.dll", "Sleep")).bytes);
  ASSERT_EQ(v.imports.size(), 1u);
  EXPECT_EQ(v.imports[0].function, "Sleep");
}

TEST(Transformations, SubstituteApi) {
  const auto t = make_substitute_api("CreateFile", "CreateFileEx");
  const auto p = artifact_of(testing::signed_model_with_imports());
  const auto after = apply_transformation(p, t);
  const auto v = parse_pe(after.bytes);
  EXPECT_EQ(v.imports[0].function, "CreateFileEx");

  // Manual delta equals the recomputed difference of both vectors.
  const auto before_f = extract_manual(parse_pe(p.bytes)).values;
  const auto after_f = extract_manual(v).values;
  const auto d = perturbation_vector(t, p, MappingId::kManual);
  for (std::size_t i = 0; i < d.values.size(); ++i) EXPECT_EQ(d.values[i], after_f[i] - before_f[i]);

  // Composite: one count moves between the two per-function buckets.
  const auto dc = perturbation_vector(t, p, MappingId::kComposite);
  const std::size_t base = idx(MappingId::kComposite, "imp_bucket_000");
  const auto from = import_bucket("KERNEL32.dll", "CreateFile");
  const auto to = import_bucket("KERNEL32.dll", "CreateFileEx");
  ASSERT_NE(from, to);
  EXPECT_EQ(dc.values[base + from], -1.0);
  EXPECT_EQ(dc.values[base + to], 1.0);

  EXPECT_EQ(code_of([&] { apply_transformation(after, t); }), ErrorCode::kNotApplicable);
}

TEST(Transformations, AddSectionManualDelta) {
  const auto& m = default_threat_model();
  const auto& add = m.transformations[0];
  ASSERT_EQ(add.kind, TransformKind::kAddSection);
  ASSERT_EQ(add.data.size(), 512u);
  for (const auto& g : testing::small_corpus()) {
    const auto d = perturbation_vector(add, g.artifact, MappingId::kManual);
    for (std::size_t i = 0; i < d.values.size(); ++i) {
      double expected = 0.0;
      if (i == idx(MappingId::kManual, "num_sections")) expected = 1.0;
      if (i == idx(MappingId::kManual, "total_section_size")) expected = 512.0;
      EXPECT_EQ(d.values[i], expected) << feature_schema(MappingId::kManual).names[i];
    }
  }
}

// The byte-level section editor and the model serializer are independent
// implementations of the same layout; on canonical images they must agree.
TEST(Transformations, AddSectionMatchesModelSerialization) {
  const auto add = default_threat_model().transformations[0];
  for (const auto& g : testing::small_corpus()) {
    ImageModel m = g.model;
    SectionSpec s;
    s.name = add.section_name;
    s.data = add.data;
    s.characteristics = add.characteristics;
    m.sections.push_back(s);
    EXPECT_EQ(first_difference(apply_transformation(g.artifact.bytes, add), serialize(m)), -1)
        << g.artifact.id;
  }
}

TEST(Transformations, ModelEditsAgreeWithByteEdits) {
  const auto& dm = default_threat_model();
  for (const auto& g : testing::small_corpus()) {
    if (g.model.certificate.empty()) continue;
    ImageModel m = g.model;
    m.certificate.clear();
    EXPECT_EQ(first_difference(apply_transformation(g.artifact.bytes, dm.transformations[5]), serialize(m)), -1);
    m = g.model;
    m.overlay.insert(m.overlay.end(), dm.transformations[1].data.begin(),
                     dm.transformations[1].data.end());
    EXPECT_EQ(first_difference(apply_transformation(g.artifact.bytes, dm.transformations[1]), serialize(m)), -1);
  }
}

TEST(Transformations, DosStubOnlyOnce) {
  const auto p = artifact_of(minimal_image_model());
  const auto once = apply_transformation(p, make_modify_dos_stub());
  EXPECT_EQ(parse_pe(once.bytes).dos_stub_bytes, replacement_dos_stub());
  EXPECT_EQ(code_of([&] { apply_transformation(once, make_modify_dos_stub()); }),
            ErrorCode::kNotApplicable);
}

TEST(Transformations, TimestampOverflowIsNotApplicable) {
  ImageModel m = minimal_image_model();
  m.timestamp = 0xffffff00u;
  EXPECT_EQ(code_of([&] { apply_transformation(artifact_of(m), make_bump_timestamp()); }),
            ErrorCode::kNotApplicable);
}

TEST(Transformations, SectionTableFullIsNotApplicable) {
  ImageModel m = minimal_image_model();
  while (m.sections.size() < max_canonical_sections(false)) {
    SectionSpec s;
    s.name = ".s" + std::to_string(m.sections.size());
    s.data = Bytes(16, 1);
    m.sections.push_back(s);
  }
  const auto add = default_threat_model().transformations[0];
  EXPECT_EQ(code_of([&] { apply_transformation(artifact_of(m), add); }), ErrorCode::kNotApplicable);
}

TEST(Transformations, LabelsArePreserved) {
  for (const auto& g : testing::small_corpus()) {
    for (const auto& t : default_threat_model().transformations) {
      try {
        EXPECT_EQ(apply_transformation(g.artifact, t).label, g.artifact.label);
      } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kNotApplicable);
      }
    }
  }
}

TEST(Monotonicity, ManualFeaturesNeverDecrease) {
  const auto m = default_threat_model();
  std::size_t applied = 0;
  for (const auto& g : testing::small_corpus()) {
    for (const auto& t : m.transformations) {
      PerturbationVector d;
      try {
        d = perturbation_vector(t, g.artifact, MappingId::kManual);
      } catch (const Error&) {
        continue;
      }
      ++applied;
      for (std::size_t i = 0; i < d.values.size(); ++i) {
        EXPECT_GE(d.values[i], 0.0) << t.label() << " " << feature_schema(MappingId::kManual).names[i];
      }
    }
  }
  EXPECT_GT(applied, testing::small_corpus().size() * 4);
}

TEST(Monotonicity, CompositeHasNegativeCoordinate) {
  const auto deltas =
      collect_delta_set(default_threat_model(), testing::small_artifacts(), MappingId::kComposite);
  bool negative = false;
  for (const auto& d : deltas) {
    negative = negative || std::any_of(d.values.begin(), d.values.end(), [](double x) { return x < 0; });
  }
  EXPECT_TRUE(negative);
}

TEST(DeltaSet, PayloadFixedKindYieldsOneVector) {
  ThreatModel m{"sig", {make_remove_signature()}};
  std::vector<ProgramArtifact> signed_samples;
  for (const auto& g : testing::small_corpus()) {
    if (!g.model.certificate.empty()) signed_samples.push_back(g.artifact);
    if (signed_samples.size() == 10) break;
  }
  ASSERT_EQ(signed_samples.size(), 10u);
  const auto deltas = collect_delta_set(m, signed_samples, MappingId::kManual);
  ASSERT_EQ(deltas.size(), 1u);
  EXPECT_EQ(deltas[0].source_kind, TransformKind::kRemoveSignature);
}

TEST(DeltaSet, IndependentOfSampleSet) {
  SyntheticSpec a;
  a.n_families_malicious = 5;
  a.samples_per_family = 3;
  a.n_benign = 15;
  a.seed = 101;
  SyntheticSpec b = a;
  b.seed = 202;
  std::vector<ProgramArtifact> sa;
  std::vector<ProgramArtifact> sb;
  for (auto& g : generate_samples(a)) sa.push_back(std::move(g.artifact));
  for (auto& g : generate_samples(b)) sb.push_back(std::move(g.artifact));
  auto da = delta_rows(collect_delta_set(default_threat_model(), sa, MappingId::kManual));
  auto db = delta_rows(collect_delta_set(default_threat_model(), sb, MappingId::kManual));
  std::sort(da.begin(), da.end());
  std::sort(db.begin(), db.end());
  EXPECT_EQ(da, db);
  // add_section, add_import, modify_dos_stub and remove_signature each have
  // their own effect; the other four kinds collapse onto the zero vector.
  EXPECT_EQ(da.size(), 5u);
}

TEST(DeltaSet, CsvRoundTrip) {
  const auto deltas =
      collect_delta_set(default_threat_model(), testing::small_artifacts(), MappingId::kComposite);
  const auto path = std::filesystem::temp_directory_path() / "robustmal_deltas.csv";
  write_delta_csv(path, deltas, MappingId::kComposite, "abc123");
  std::string digest;
  const auto back = read_delta_csv(path, &digest);
  EXPECT_EQ(digest, "abc123");
  ASSERT_EQ(back.size(), deltas.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].values, deltas[i].values);
    EXPECT_EQ(back[i].source_kind, deltas[i].source_kind);
    EXPECT_EQ(back[i].schema_id, MappingId::kComposite);
  }
  std::filesystem::remove(path);
}

TEST(ThreatModelConfig, JsonRoundTrip) {
  const auto m = default_threat_model();
  const nlohmann::json j = m;
  const auto back = j.get<ThreatModel>();
  EXPECT_EQ(back.name, m.name);
  EXPECT_EQ(back.transformations, m.transformations);
}

TEST(ThreatModelConfig, GeneratedPayloads) {
  const auto j = nlohmann::json::parse(R"({"name": "x", "transformations": [
      {"kind": "add_section", "name": ".adv", "size": 512, "seed": 7},
      {"kind": "append_overlay", "size": 1024}]})");
  const auto m = j.get<ThreatModel>();
  EXPECT_EQ(m.transformations[0], default_threat_model().transformations[0]);
  EXPECT_EQ(m.transformations[1], default_threat_model().transformations[1]);
}

TEST(ThreatModelConfig, RejectsEmptyDuplicateAndUnknown) {
  EXPECT_EQ(code_of([] { nlohmann::json::parse(R"({"transformations": []})").get<ThreatModel>(); }),
            ErrorCode::kInvalidConfig);
  EXPECT_EQ(code_of([] {
              nlohmann::json::parse(
                  R"({"transformations": [{"kind": "remove_signature"}, {"kind": "remove_signature"}]})")
                  .get<ThreatModel>();
            }),
            ErrorCode::kInvalidConfig);
  EXPECT_EQ(code_of([] {
              nlohmann::json::parse(R"({"transformations": [{"kind": "pack"}]})").get<ThreatModel>();
            }),
            ErrorCode::kInvalidConfig);
}

ThreatModel three_one_shot() {
  return {"one-shot",
          {make_remove_signature(), make_modify_dos_stub(), make_substitute_api("CreateFile", "CreateFileEx")}};
}

TEST(Reachability, DepthZeroIsReflexive) {
  const auto p = artifact_of(testing::signed_model_with_imports());
  const auto states = reachable_set(p.bytes, default_threat_model(), MappingId::kManual, 0);
  ASSERT_EQ(states.size(), 1u);
  EXPECT_EQ(states[0].bytes, p.bytes);
  EXPECT_TRUE(preorder_leq(p.bytes, p.bytes, default_threat_model(), MappingId::kManual, 0));
}

TEST(Reachability, IdempotentTransformation) {
  const auto p = artifact_of(testing::signed_model_with_imports());
  ThreatModel m{"sig", {make_remove_signature()}};
  EXPECT_EQ(reachable_set(p.bytes, m, MappingId::kManual, 3).size(), 2u);
}

TEST(Reachability, ThreeIndependentEditsAtDepthTwo) {
  const auto p = artifact_of(testing::signed_model_with_imports());
  const auto m = three_one_shot();
  const auto states = reachable_set(p.bytes, m, MappingId::kComposite, 2);

  // Oracle: every sequence of length <= 2, deduplicated by feature vector.
  std::set<std::vector<double>> oracle;
  oracle.insert(features_of(p.bytes, MappingId::kComposite));
  for (const auto& a : m.transformations) {
    Bytes one;
    try {
      one = apply_transformation(p.bytes, a);
    } catch (const Error&) {
      continue;
    }
    oracle.insert(features_of(one, MappingId::kComposite));
    for (const auto& b : m.transformations) {
      try {
        oracle.insert(features_of(apply_transformation(one, b), MappingId::kComposite));
      } catch (const Error&) {
      }
    }
  }
  EXPECT_EQ(oracle.size(), 7u);
  EXPECT_EQ(states.size(), oracle.size());
  for (const auto& s : states) EXPECT_EQ(oracle.count(s.features), 1u);
}

TEST(Reachability, BoundedTransitivity) {
  const auto p = artifact_of(testing::signed_model_with_imports());
  const auto m = three_one_shot();
  const Bytes b = apply_transformation(p.bytes, m.transformations[0]);
  const Bytes c = apply_transformation(b, m.transformations[1]);
  EXPECT_TRUE(preorder_leq(p.bytes, b, m, MappingId::kComposite, 1));
  EXPECT_TRUE(preorder_leq(b, c, m, MappingId::kComposite, 1));
  EXPECT_TRUE(preorder_leq(p.bytes, c, m, MappingId::kComposite, 2));
  EXPECT_FALSE(preorder_leq(p.bytes, c, m, MappingId::kComposite, 1));
}

TEST(Reachability, NodeCap) {
  const auto p = artifact_of(testing::signed_model_with_imports());
  EXPECT_EQ(code_of([&] { reachable_set(p.bytes, default_threat_model(), MappingId::kComposite, 2, 5); }),
            ErrorCode::kBudgetExceeded);
}

}  // namespace
}  // namespace robustmal
