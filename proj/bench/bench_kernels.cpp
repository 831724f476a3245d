#include <benchmark/benchmark.h>

#include <cmath>
#include <map>

#include "cwsl/inverse_msm.hpp"
#include "cwsl/spectral_forward.hpp"

using namespace cwsl;

namespace {

struct Fixture {
  ProblemSpec model;
  SequenceWeights w;
  XGrid grid{1.5, 0.6, 201};
};

const Fixture& fixture(int N) {
  static std::map<int, Fixture> cache;
  auto it = cache.find(N);
  if (it != cache.end()) return it->second;
  ProblemSpec t;
  t.T = 1.5;
  t.b = 0.6;
  t.a1 = std::polar(1.8, 0.25);
  t.a2 = std::polar(0.6, 0.15);
  t.d1 = std::polar(1.0, 0.3);
  t.d2 = {0.0, 0.15};
  t.h = {0.2, -0.1};
  t.H = -0.4;
  t.q = Potential::sampled(t.T, 201, [](double x) { return 0.3 * cplx(1.0, 0.5) * std::exp(-25.0 * (x - 0.5) * (x - 0.5)); });
  Fixture f;
  RecoveredConstants rc;
  rc.a1 = t.a1;
  rc.a2 = t.a2;
  rc.d1 = t.d1;
  rc.b = rc.l1 = t.b;
  rc.l2 = t.T - t.b;
  f.model = build_model(rc, t.T);
  const SpectralData data = locate_eigenvalues(t, N, ValidationMode::strict);
  const SpectralData md = closed_form_spectrum_q0(f.model, N, ValidationMode::strict);
  f.w = compute_weights(data, md, validate_problem(f.model, ValidationMode::strict));
  return cache.emplace(N, std::move(f)).first->second;
}

Execution mode(const benchmark::State& s) { return s.range(1) == 0 ? Execution::serial : Execution::parallel; }

void BM_KernelTable(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    KernelTable t(f.model, f.w, f.grid, {}, mode(state));
    benchmark::DoNotOptimize(&t);
  }
}

void BM_SolveAllStations(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<int>(state.range(0)));
  const KernelTable t(f.model, f.w, f.grid, {}, Execution::parallel);
  for (auto _ : state) benchmark::DoNotOptimize(solve_all_stations(f.w, t, mode(state)));
}

}  // namespace

// Second argument: 0 serial reference, 1 OpenMP.
BENCHMARK(BM_KernelTable)->ArgsProduct({{16, 40}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SolveAllStations)->ArgsProduct({{16, 40}, {0, 1}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
