#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "robustmal/artifact.hpp"
#include "robustmal/features.hpp"

namespace robustmal {

enum class TransformKind {
  kAddSection,
  kAppendOverlay,
  kAddImport,
  kAddStrings,
  kModifyDosStub,
  kRemoveSignature,
  kBumpTimestamp,
  kSubstituteApi,
};

std::string_view kind_name(TransformKind kind);
TransformKind parse_kind(std::string_view name);  // throws kInvalidConfig

// One functionality-preserving edit with a payload fixed at construction.
// Only the fields relevant to `kind` are meaningful.
struct Transformation {
  TransformKind kind = TransformKind::kAppendOverlay;
  std::string section_name;          // add_section
  Bytes data;                        // add_section, append_overlay
  std::uint32_t characteristics = 0; // add_section
  std::string dll;                   // add_import
  std::string function;              // add_import
  std::vector<std::string> strings;  // add_strings
  std::string from_name;             // substitute_api
  std::string to_name;               // substitute_api
  std::uint32_t timestamp_delta = 0; // bump_timestamp

  std::string label() const;
  bool operator==(const Transformation&) const = default;
};

Transformation make_add_section(std::string name, Bytes data,
                                std::uint32_t characteristics = 0x40000040);
Transformation make_append_overlay(Bytes data);
Transformation make_add_import(std::string dll, std::string function);
Transformation make_add_strings(std::vector<std::string> strings);
Transformation make_modify_dos_stub();
Transformation make_remove_signature();
Transformation make_bump_timestamp(std::uint32_t delta = 86400);
Transformation make_substitute_api(std::string from, std::string to);

// DOS stub written by modify_dos_stub.
const Bytes& replacement_dos_stub();

struct ThreatModel {
  std::string name;
  std::vector<Transformation> transformations;

  // Throws kInvalidConfig when empty or when two entries are identical.
  void validate() const;
};

// Payload of the default add_strings transformation.
const std::vector<std::string>& goodware_strings();

// The eight payload-fixed transformations used throughout the tool.
ThreatModel default_threat_model();

void to_json(nlohmann::json& j, const Transformation& t);
void from_json(const nlohmann::json& j, Transformation& t);
void to_json(nlohmann::json& j, const ThreatModel& m);
void from_json(const nlohmann::json& j, ThreatModel& m);
ThreatModel load_threat_model(const std::filesystem::path& path);

// Applies `t` to raw PE bytes. Throws kNotApplicable when the precondition of
// the kind does not hold, kMalformedPE when the input does not parse.
Bytes apply_transformation(ByteSpan bytes, const Transformation& t);
ProgramArtifact apply_transformation(const ProgramArtifact& p, const Transformation& t);

// Feature vector of raw bytes under `mapping`.
std::vector<double> features_of(ByteSpan bytes, MappingId mapping);

struct PerturbationVector {
  std::vector<double> values;
  TransformKind source_kind = TransformKind::kAppendOverlay;
  MappingId schema_id = MappingId::kManual;
};

PerturbationVector perturbation_vector(const Transformation& t, const ProgramArtifact& p,
                                       MappingId mapping);

// Distinct perturbation vectors over all applicable (transformation, sample)
// pairs, in first-seen order (samples outer, transformations inner). Two
// vectors are equal when they agree after rounding to 12 significant digits.
std::vector<PerturbationVector> collect_delta_set(const ThreatModel& m,
                                                  const std::vector<ProgramArtifact>& samples,
                                                  MappingId mapping);

// Adds `v` to `set` unless an equal vector (same rounding) is present.
bool insert_delta(std::vector<PerturbationVector>& set, PerturbationVector v);

struct ReachableState {
  Bytes bytes;
  std::vector<double> features;
  std::vector<std::size_t> path;  // indices into ThreatModel::transformations
};

inline constexpr int kDefaultMaxDepth = 4;
inline constexpr std::size_t kDefaultNodeCap = 100000;

// Breadth-first closure of `bytes` under at most `depth` transformations,
// deduplicated by feature vector. State 0 is the input. Throws
// kBudgetExceeded once more than `node_cap` states have been discovered.
std::vector<ReachableState> reachable_set(ByteSpan bytes, const ThreatModel& m, MappingId mapping,
                                          int depth, std::size_t node_cap = kDefaultNodeCap);

// True when the features of `target` match a state reachable from `source`
// within `depth` steps. False only means "not found within depth".
bool preorder_leq(ByteSpan source, ByteSpan target, const ThreatModel& m, MappingId mapping,
                  int depth, std::size_t node_cap = kDefaultNodeCap);

// CSV persistence of a delta set: optional "# config_digest: <hex>" line,
// header "source_kind,<feature names>", one vector per row.
void write_delta_csv(const std::filesystem::path& path, const std::vector<PerturbationVector>& deltas,
                     MappingId mapping, const std::string& config_digest = {});
std::vector<PerturbationVector> read_delta_csv(const std::filesystem::path& path,
                                               std::string* config_digest = nullptr);

// Deltas as a row-major matrix, one row per vector.
std::vector<std::vector<double>> delta_rows(const std::vector<PerturbationVector>& deltas);

// SHA-256 over the rows printed with 17 significant digits, in order.
std::string delta_digest(const std::vector<std::vector<double>>& rows);
std::string delta_digest(const std::vector<PerturbationVector>& deltas);

}  // namespace robustmal
