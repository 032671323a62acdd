#pragma once

#include <functional>
#include <string>
#include <vector>

#include "robustmal/corpus.hpp"
#include "robustmal/error.hpp"
#include "robustmal/pe_image.hpp"

namespace robustmal::testing {

// Small corpus shared by tests that only need a handful of realistic samples.
inline const std::vector<GeneratedSample>& small_corpus() {
  static const std::vector<GeneratedSample> samples = [] {
    SyntheticSpec spec;
    spec.n_families_malicious = 4;
    spec.samples_per_family = 3;
    spec.n_benign = 12;
    spec.seed = 11;
    return generate_samples(spec);
  }();
  return samples;
}

inline std::vector<ProgramArtifact> small_artifacts() {
  std::vector<ProgramArtifact> out;
  for (const auto& g : small_corpus()) out.push_back(g.artifact);
  return out;
}

// Code of the Error thrown by `f`; kIoError when nothing is thrown.
inline ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kIoError;
}

inline ImageModel signed_model_with_imports() {
  ImageModel m = minimal_image_model();
  SectionSpec data;
  data.name = ".data";
  data.data = Bytes(300, 0x11);
  data.characteristics = kScnInitializedData | kScnRead | kScnWrite;
  m.sections.push_back(data);
  SectionSpec idata;
  idata.name = ".idata";
  idata.role = SectionRole::kImports;
  m.sections.push_back(idata);
  m.imports = {{"KERNEL32.dll", {"CreateFile", "ReadFile", "GetProcAddress"}},
               {"USER32.dll", {"MessageBox", "GetDlgItem"}}};
  m.certificate = make_certificate(Bytes(100, 0x30));
  return m;
}

}  // namespace robustmal::testing
