#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "robustmal/detectors.hpp"
#include "robustmal/random.hpp"
#include "robustmal/selection.hpp"

namespace robustmal::testing {

inline constexpr int kThresholdUnits = 9;

// Unit u of the threshold family on 3-dimensional inputs: u = 0..5 is the
// coordinate cut [v_(u % 3) >= 1 + u / 3], u = 6..8 the sum cut
// [v_0 + v_1 + v_2 >= u - 5].
inline bool threshold_unit(int u, std::span<const double> v) {
  if (u < 6) return v[static_cast<std::size_t>(u % 3)] >= 1.0 + u / 3;
  return v[0] + v[1] + v[2] >= static_cast<double>(u - 5);
}

// Threshold detector for subset `mask` of the 9 units: each active unit adds
// 2^u, so distinct subsets give distinct score functions.
inline ScoreFunction threshold_detector(unsigned mask) {
  return [mask](std::span<const double> v) {
    double s = 0.0;
    for (int u = 0; u < kThresholdUnits; ++u) {
      if ((mask >> u) & 1U) s += threshold_unit(u, v) ? static_cast<double>(1U << u) : 0.0;
    }
    return s;
  };
}

// Monotone network with random non-negative weights, as a score function.
inline ScoreFunction random_robust_detector(std::uint64_t seed, std::size_t dim = 3) {
  auto net = std::make_shared<MlpNet>(MlpNet::init(dim, {4}, true, seed));
  Rng rng(seed);
  for (auto& b : net->biases) {
    for (auto& x : b) x = rng.uniform(-1.0, 1.0);
  }
  return [net](std::span<const double> v) { return net->forward(v); };
}

}  // namespace robustmal::testing
