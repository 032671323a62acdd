#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "robustmal/error.hpp"
#include "robustmal/features.hpp"
#include "robustmal/pe_image.hpp"
#include "test_support.hpp"

namespace robustmal {
namespace {

double at(const FeatureVector& f, std::string_view name) {
  return f.values[feature_schema(f.schema_id).index_of(name)];
}

// Independent FNV-1a 64 over "normalized_dll:function".
std::size_t oracle_bucket(const std::string& dll, const std::string& fn) {
  std::string d;
  for (char c : dll) d.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (d.size() >= 4 && d.substr(d.size() - 4) == ".dll") d.resize(d.size() - 4);
  const std::string key = d + ":" + fn;
  unsigned long long h = 14695981039346656037ULL;
  for (unsigned char c : key) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return static_cast<std::size_t>(h % 128);
}

TEST(Schema, Dimensions) {
  const auto& manual = feature_schema(MappingId::kManual);
  EXPECT_EQ(manual.dimension, 40u);
  EXPECT_EQ(manual.names.size(), 40u);
  for (bool b : manual.monotone_claimed) EXPECT_TRUE(b);
  const auto& composite = feature_schema(MappingId::kComposite);
  EXPECT_EQ(composite.dimension, 617u);
  EXPECT_EQ(composite.names.size(), 617u);
  EXPECT_EQ(composite.groups.size(), 617u);
  EXPECT_EQ(composite.monotone_claimed.size(), 617u);
}

TEST(Schema, CompositeGroupsAreEightContiguousRanges) {
  const auto& s = feature_schema(MappingId::kComposite);
  std::vector<FeatureGroup> order;
  std::map<FeatureGroup, std::size_t> sizes;
  for (std::size_t i = 0; i < s.dimension; ++i) {
    if (order.empty() || order.back() != s.groups[i]) order.push_back(s.groups[i]);
    ++sizes[s.groups[i]];
  }
  ASSERT_EQ(order.size(), 8u);
  EXPECT_EQ(sizes[FeatureGroup::kByte], 256u);
  EXPECT_EQ(sizes[FeatureGroup::kStrings], 100u);
  EXPECT_EQ(sizes[FeatureGroup::kGeneral], 8u);
  EXPECT_EQ(sizes[FeatureGroup::kHeader], 24u);
  EXPECT_EQ(sizes[FeatureGroup::kSection], 40u);
  EXPECT_EQ(sizes[FeatureGroup::kImports], 128u);
  EXPECT_EQ(sizes[FeatureGroup::kExports], 29u);
  EXPECT_EQ(sizes[FeatureGroup::kDataDirectories], 32u);
}

TEST(Schema, HistogramsAreNotClaimedMonotone) {
  const auto& s = feature_schema(MappingId::kComposite);
  for (std::size_t i = 0; i < s.dimension; ++i) {
    if (s.normalized_histogram[i]) EXPECT_FALSE(s.monotone_claimed[i]) << s.names[i];
  }
}

TEST(Schema, UnknownMapping) {
  try {
    parse_mapping("ember");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownMapping);
  }
}

TEST(Manual, DirectFieldReads) {
  ImageModel m = testing::signed_model_with_imports();
  SectionSpec extra;
  extra.name = ".rdata";
  extra.data = Bytes(64, 'a');
  m.sections.push_back(extra);
  const auto f = extract_manual(parse_pe(serialize(m)));
  EXPECT_EQ(f.values.size(), 40u);
  EXPECT_EQ(at(f, "dos_stub_modified"), 0.0);
  EXPECT_EQ(at(f, "has_no_signature"), 0.0);
  EXPECT_EQ(at(f, "num_sections"), 4.0);
  EXPECT_EQ(at(f, "size_rdata"), 512.0);
  // 64 'a' bytes followed by 448 bytes of file-alignment padding.
  const double h = -(0.125 * std::log2(0.125) + 0.875 * std::log2(0.875));
  EXPECT_NEAR(at(f, "entropy_rdata"), 512.0 * h, 1e-9);
  EXPECT_EQ(at(f, "imports_kernel32"), 3.0);
  EXPECT_EQ(at(f, "imports_user32"), 2.0);
  EXPECT_EQ(at(f, "imports_total"), 5.0);
  EXPECT_EQ(at(f, "num_dlls"), 2.0);
}

TEST(Manual, KeywordCounts) {
  ImageModel m = minimal_image_model();
  SectionSpec idata;
  idata.name = ".idata";
  idata.role = SectionRole::kImports;
  m.sections.push_back(idata);
  m.imports = {{"kernel32.dll", {"CreateFile", "CreateFileEx"}}};
  const auto f = extract_manual(parse_pe(serialize(m)));
  EXPECT_EQ(at(f, "imports_kernel32"), 2.0);
  EXPECT_EQ(at(f, "kw_File"), 2.0);
  EXPECT_EQ(at(f, "kw_Process"), 0.0);
  EXPECT_EQ(at(f, "imports_other"), 0.0);
}

TEST(Manual, ModifiedStub) {
  ImageModel m = minimal_image_model();
  m.dos_stub[20] ^= 0xff;
  const auto f = extract_manual(parse_pe(serialize(m)));
  EXPECT_EQ(at(f, "dos_stub_modified"), 1.0);
  EXPECT_EQ(at(f, "has_no_signature"), 1.0);
}

TEST(Composite, ZeroImportsAndZeroHeavyBytes) {
  ImageModel m = minimal_image_model();
  m.sections[0].data = Bytes(1024, 0);
  const auto f = extract_composite(parse_pe(serialize(m)));
  EXPECT_EQ(f.values.size(), 617u);
  const auto& s = feature_schema(MappingId::kComposite);
  double imports = 0.0;
  for (std::size_t i = 0; i < s.dimension; ++i) {
    if (s.groups[i] == FeatureGroup::kImports) imports += f.values[i];
  }
  EXPECT_EQ(imports, 0.0);
  EXPECT_EQ(at(f, "general_num_imports"), 0.0);
  double byte_mass = 0.0;
  std::size_t argmax = 0;
  for (std::size_t i = 0; i < 256; ++i) {
    byte_mass += f.values[i];
    if (f.values[i] > f.values[argmax]) argmax = i;
  }
  EXPECT_NEAR(byte_mass, 1.0, 1e-12);
  EXPECT_EQ(argmax, 0u);
  EXPECT_GT(f.values[0], 0.9);
}

TEST(Composite, ImportBucketsMatchIndependentHash) {
  for (const auto& g : testing::small_corpus()) {
    const PEView v = parse_pe(g.artifact.bytes);
    const auto f = extract_composite(v);
    std::vector<double> expected(128, 0.0);
    for (const auto& d : g.model.imports) {
      for (const auto& fn : d.functions) expected[oracle_bucket(d.name, fn)] += 1.0;
    }
    const std::size_t base = feature_schema(MappingId::kComposite).index_of("imp_bucket_000");
    for (std::size_t b = 0; b < 128; ++b) EXPECT_EQ(f.values[base + b], expected[b]);
  }
}

TEST(Composite, ValuesAreFinite) {
  for (const auto& g : testing::small_corpus()) {
    for (auto id : {MappingId::kManual, MappingId::kComposite}) {
      const auto f = extract_features(id, parse_pe(g.artifact.bytes));
      for (double x : f.values) EXPECT_TRUE(std::isfinite(x));
    }
  }
}

}  // namespace
}  // namespace robustmal
