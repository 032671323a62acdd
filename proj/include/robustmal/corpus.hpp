#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "robustmal/artifact.hpp"
#include "robustmal/pe_image.hpp"

namespace robustmal {

// Parameters of the synthetic corpus. Malicious samples are separable on
// import patterns and section content; both classes also differ on byte and
// string statistics, which is what makes fragile features tempting.
struct SyntheticSpec {
  int n_families_malicious = 20;
  int samples_per_family = 5;
  int n_benign = 100;
  std::uint64_t seed = 1;
  double malicious_signed_rate = 0.6;
  double benign_signed_rate = 0.9;
  double malicious_stub_modified_rate = 0.3;
  double benign_stub_modified_rate = 0.02;
  double pe32plus_rate = 0.3;
  // Probability that a benign sample borrows an API from the malicious pool.
  double api_overlap = 0.15;
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);
std::string spec_digest(const SyntheticSpec& s);

struct Dataset {
  std::vector<ProgramArtifact> artifacts;
  SyntheticSpec spec;
  std::string spec_digest;

  std::size_t size() const { return artifacts.size(); }
  std::vector<int> labels() const;
  std::vector<int> family_ids() const;
};

// Ground truth recorded by the generator for one artifact.
struct GeneratedSample {
  ImageModel model;
  ProgramArtifact artifact;
};

Dataset generate_corpus(const SyntheticSpec& spec);

// Same draw as generate_corpus, with the image model kept alongside each
// artifact so tests can compare parsed structure against what was written.
std::vector<GeneratedSample> generate_samples(const SyntheticSpec& spec);

// Splits malicious samples by family and benign samples i.i.d.; no family is
// present on both sides. Throws kSingleFamily when fewer than two families exist.
std::pair<Dataset, Dataset> family_split(const Dataset& ds, double train_fraction,
                                         std::uint64_t seed);

// Directory layout: manifest.json + artifacts/<id>.bin.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir,
                  const std::string& config_digest = {});
Dataset load_dataset(const std::filesystem::path& dir);

// Smallest canonical image: one code section, no imports, unsigned.
ImageModel minimal_image_model();

}  // namespace robustmal
