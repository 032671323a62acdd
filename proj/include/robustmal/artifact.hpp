#pragma once

#include <string>

#include "robustmal/pe.hpp"

namespace robustmal {

inline constexpr int kBenignFamily = -1;

// A program in problem space: the raw image plus its ground-truth label.
struct ProgramArtifact {
  std::string id;
  Bytes bytes;
  int label = 0;  // 1 = malicious
  int family = kBenignFamily;
};

}  // namespace robustmal
