// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "lrc/fermigrad.hpp"
#include "lrc/pivga.hpp"
#include "lrc/rng.hpp"
#include "lrc/svd_compress.hpp"
#include "lrc/toyharness.hpp"

using namespace lrc;

namespace {

LowRankFactors random_factors(Index m, Index n, Index r) {
  Rng rng(Seed{42});
  return {rng.gaussian(m, r), rng.gaussian(r, n)};
}

}  // namespace

static void BM_DataAwareSvd(benchmark::State& state) {
  const Index n = state.range(0);
  Rng rng(Seed{1});
  const Matrix w = rng.gaussian(n, n);
  const Matrix x = rng.gaussian(n, 4 * n);
  const Matrix s = cholesky_whiten(accumulate_calibration(CalibState::empty(n), x).C).factor;
  for (auto _ : state) {
    benchmark::DoNotOptimize(data_aware_svd(w, s, n / 4));
  }
}
BENCHMARK(BM_DataAwareSvd)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

static void BM_PivgaFactorize(benchmark::State& state) {
  const LowRankFactors f = random_factors(1024, 1024, state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(pivga_factorize(f));
  }
}
BENCHMARK(BM_PivgaFactorize)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

// Forward passes of one 1024x1024 layer at rank r on a batch of 32.
static void BM_DenseForward(benchmark::State& state) {
  const Matrix w = random_factors(1024, 1024, state.range(0)).product();
  const Matrix x = Rng(Seed{2}).gaussian(1024, 32);
  for (auto _ : state) {
    Matrix y = w * x;
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_DenseForward)->Arg(128)->Arg(512)->Unit(benchmark::kMicrosecond);

static void BM_LowRankForward(benchmark::State& state) {
  const LowRankFactors f = random_factors(1024, 1024, state.range(0));
  const Matrix x = Rng(Seed{2}).gaussian(1024, 32);
  for (auto _ : state) {
    Matrix y = f.A * (f.B * x);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_LowRankForward)->Arg(128)->Arg(512)->Unit(benchmark::kMicrosecond);

static void BM_PivgaForward(benchmark::State& state) {
  const PivGaFactors p = pivga_factorize(random_factors(1024, 1024, state.range(0)));
  const Matrix x = Rng(Seed{2}).gaussian(1024, 32);
  for (auto _ : state) {
    benchmark::DoNotOptimize(pivga_forward(x, p));
  }
}
BENCHMARK(BM_PivgaForward)->Arg(128)->Arg(512)->Unit(benchmark::kMicrosecond);

static void BM_GradMu(benchmark::State& state) {
  const ToyModel m = calibrated_teacher(ToyModelSpec::desk_default(Seed{3}), 1024, Seed{4});
  const Matrix x = gen_calibration(m.spec, state.range(0), Seed{5});
  const Matrix teacher = forward(m, x, DenseMode{});
  BudgetConstraint b;
  b.shapes = m.shapes();
  b.n_inc = m.n_inc;
  b.n_target = m.dense_params() / 2 + m.n_inc;
  MuVector mu = MuVector::at_caps(m.caps());
  for (double& v : mu.mu) v *= 0.5;
  for (auto _ : state) {
    benchmark::DoNotOptimize(grad_mu(m, teacher, x, mu, b, 1.0, {}));
  }
}
BENCHMARK(BM_GradMu)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
