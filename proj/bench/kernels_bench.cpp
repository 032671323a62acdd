// OpenMP kernels against their serial references.

#include <benchmark/benchmark.h>

#include <memory>

#include "robustmal/attacks.hpp"
#include "robustmal/corpus.hpp"
#include "robustmal/kernels.hpp"
#include "robustmal/random.hpp"

namespace robustmal {
namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = rng.uniform(-1.0, 1.0);
  return m;
}

using Kernel = void (*)(const Matrix&, const Matrix&, Matrix&);

// Shapes: activations (n x 617) against a 16 x 617 layer, and the k-NN
// distance table on a 100-sample training set.
template <Kernel K>
void BM_AbT(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, 617, 1);
  const Matrix b = random_matrix(16, 617, 2);
  Matrix c;
  for (auto _ : state) {
    K(a, b, c);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

template <Kernel K>
void BM_AtB(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, 16, 3);
  const Matrix b = random_matrix(n, 617, 4);
  Matrix c;
  for (auto _ : state) {
    K(a, b, c);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

template <Kernel K>
void BM_AB(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, 617, 5);
  const Matrix b = random_matrix(617, 617, 6);
  Matrix c;
  for (auto _ : state) {
    K(a, b, c);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

template <Kernel K>
void BM_Distances(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix q = random_matrix(n, 617, 7);
  const Matrix r = random_matrix(100, 617, 8);
  Matrix out;
  for (auto _ : state) {
    K(q, r, out);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

BENCHMARK(BM_AbT<kernels::gemm_abt>)->Name("gemm_abt/parallel")->Arg(64)->Arg(1024);
BENCHMARK(BM_AbT<kernels::serial::gemm_abt>)->Name("gemm_abt/serial")->Arg(64)->Arg(1024);
BENCHMARK(BM_AtB<kernels::gemm_atb>)->Name("gemm_atb/parallel")->Arg(64)->Arg(1024);
BENCHMARK(BM_AtB<kernels::serial::gemm_atb>)->Name("gemm_atb/serial")->Arg(64)->Arg(1024);
BENCHMARK(BM_AB<kernels::gemm>)->Name("gemm/parallel")->Arg(16)->Arg(128);
BENCHMARK(BM_AB<kernels::serial::gemm>)->Name("gemm/serial")->Arg(16)->Arg(128);
BENCHMARK(BM_Distances<kernels::squared_distances>)->Name("squared_distances/parallel")->Arg(100)->Arg(400);
BENCHMARK(BM_Distances<kernels::serial::squared_distances>)->Name("squared_distances/serial")->Arg(100)->Arg(400);

// Attack suite on a fixed linear detector over the default corpus malware.
struct SuiteInput {
  std::vector<ProgramArtifact> malware;
  std::unique_ptr<LinearDetector> detector;
};

const SuiteInput& suite_input() {
  static const SuiteInput in = [] {
    SuiteInput s;
    SyntheticSpec spec;
    spec.n_families_malicious = 8;
    spec.samples_per_family = 4;
    spec.n_benign = 1;
    for (auto& a : generate_corpus(spec).artifacts) {
      if (a.label == 1) s.malware.push_back(a);
    }
    std::vector<double> w(40, 0.0);
    w[feature_schema(MappingId::kManual).index_of("has_no_signature")] = 1.0;
    w[feature_schema(MappingId::kManual).index_of("num_sections")] = -0.2;
    s.detector = std::make_unique<LinearDetector>(w, 0.0, MappingId::kManual);
    s.detector->set_threshold(-10.0);
    return s;
  }();
  return in;
}

template <bool Parallel>
void BM_AttackSuite(benchmark::State& state) {
  const auto& in = suite_input();
  AttackBudget b;
  b.max_steps = 4;
  b.max_queries = 60;
  b.wall_clock_limit = 0.0;
  const std::vector<AttackStrategy> strategies{AttackStrategy::kGreedy, AttackStrategy::kRandom};
  for (auto _ : state) {
    auto r = Parallel ? attack_suite(*in.detector, in.malware, default_threat_model(), MappingId::kManual, strategies, b)
                      : serial::attack_suite(*in.detector, in.malware, default_threat_model(), MappingId::kManual,
                                             strategies, b);
    benchmark::DoNotOptimize(r.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(in.malware.size()));
}

BENCHMARK(BM_AttackSuite<true>)->Name("attack_suite/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AttackSuite<false>)->Name("attack_suite/serial")->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace robustmal

BENCHMARK_MAIN();
