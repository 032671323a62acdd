#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "robustmal/pe.hpp"

namespace robustmal {

enum class MappingId { kManual, kComposite };

std::string_view mapping_name(MappingId id);
MappingId parse_mapping(std::string_view name);  // throws kUnknownMapping

enum class FeatureGroup {
  kManual,
  kByte,
  kStrings,
  kGeneral,
  kHeader,
  kSection,
  kImports,
  kExports,
  kDataDirectories,
};

std::string_view group_name(FeatureGroup g);

struct FeatureSchema {
  MappingId mapping_id = MappingId::kManual;
  std::size_t dimension = 0;
  std::vector<std::string> names;
  std::vector<FeatureGroup> groups;
  std::vector<bool> monotone_claimed;
  // Indices of coordinates that belong to a normalized histogram.
  std::vector<bool> normalized_histogram;

  std::size_t index_of(std::string_view name) const;  // throws kInvalidConfig
};

inline constexpr std::size_t kManualDimension = 40;
inline constexpr std::size_t kCompositeDimension = 617;

// Composite group sizes, in schema order.
inline constexpr std::size_t kByteGroupSize = 256;
inline constexpr std::size_t kStringsGroupSize = 100;
inline constexpr std::size_t kGeneralGroupSize = 8;
inline constexpr std::size_t kHeaderGroupSize = 24;
inline constexpr std::size_t kSectionGroupSize = 40;
inline constexpr std::size_t kImportBuckets = 128;
inline constexpr std::size_t kExportBuckets = 28;
inline constexpr std::size_t kExportsGroupSize = kExportBuckets + 1;
inline constexpr std::size_t kDataDirectoriesGroupSize = 32;
inline constexpr std::size_t kCompositeSectionSlots = 8;

// DLLs with a dedicated import counter in the manual mapping, in schema order.
const std::vector<std::string>& manual_tracked_dlls();
// Case-sensitive substrings counted over imported function names.
const std::vector<std::string>& manual_keywords();

const FeatureSchema& feature_schema(MappingId id);

struct FeatureVector {
  std::vector<double> values;
  MappingId schema_id = MappingId::kManual;
};

FeatureVector extract_manual(const PEView& view);
FeatureVector extract_composite(const PEView& view);
FeatureVector extract_features(MappingId id, const PEView& view);

// FNV-1a, 64-bit.
std::uint64_t fnv1a64(std::string_view data);

// Bucket of an import in the composite mapping: fnv1a64("dll:function") mod 128
// with the DLL name normalized by normalize_dll_name().
std::size_t import_bucket(std::string_view dll, std::string_view function);
std::size_t export_bucket(std::string_view name);

}  // namespace robustmal
