#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "json.hpp"
#include "robustmal/evaluation.hpp"

namespace robustmal {

// Settings shared by every subcommand, read from one JSON file.
struct PipelineConfig {
  std::optional<SyntheticSpec> corpus_spec;
  std::string corpus_path;
  MappingId mapping = MappingId::kManual;
  ThreatModel threat_model = default_threat_model();
  std::uint64_t seed = 1;
  double train_fraction = 0.5;
  double val_fraction = 0.2;
  ModelSpec model;  // mapping defaults to `mapping`
  AttackBudget budget;
  std::vector<AttackStrategy> strategies{AttackStrategy::kGreedy, AttackStrategy::kRandom};
  CertifyOptions certify;
  nlohmann::json raw;  // the whole document, for eval and ablation
  std::string digest;  // SHA-256 of raw after overrides
};

// Validates everything before any work; throws kInvalidConfig or
// kUnknownMapping. `seed` overrides both "seed" and "seeds".
PipelineConfig parse_pipeline_config(nlohmann::json raw, std::optional<std::uint64_t> seed = std::nullopt);

// Entry point of the robustmal tool. Results go to `out` as one JSON line;
// failures go to `err` as {"error", "message"} with exit code 2 for
// validation errors and 3 for everything else.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace robustmal
