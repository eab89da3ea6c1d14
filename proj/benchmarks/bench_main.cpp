#include <benchmark/benchmark.h>

#include <random>

#include "ebdesign/designer.hpp"
#include "ebdesign/risk_engine.hpp"
#include "ebdesign/sensitivity.hpp"

using namespace ebdesign;

namespace {

RiskQuery random_query(std::size_t K, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> s(1e-3, 1e-2);
  std::normal_distribution<double> n01;
  std::vector<double> sigma(K), xi(K);
  for (std::size_t k = 0; k < K; ++k) {
    sigma[k] = s(eng);
    xi[k] = 0.05 * n01(eng);
  }
  RiskQuery q;
  q.family = ShrinkageFamily::kappa2;
  q.sigma = DiagonalCovariance(sigma);
  q.xi = EffectVector(xi);
  return q;
}

StratumMoments random_moments(std::size_t K, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> mu(0.02, 0.4);
  std::vector<double> mt(K), mc(K);
  for (std::size_t k = 0; k < K; ++k) {
    mt[k] = mu(eng);
    mc[k] = mu(eng);
  }
  return StratumMoments::binary(mt, mc);
}

}  // namespace

static void BM_RiskExact(benchmark::State& state) {
  const auto q = random_query(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(risk_exact(q).value);
}
BENCHMARK(BM_RiskExact)->Arg(3)->Arg(6)->Arg(12)->Arg(24);

static void BM_McRisk(benchmark::State& state) {
  const auto q = random_query(12, 2);
  for (auto _ : state) benchmark::DoNotOptimize(mc_risk(q, state.range(0), 3).mean);
}
BENCHMARK(BM_McRisk)->Arg(20'000)->Arg(200'000)->Unit(benchmark::kMillisecond);

static void BM_Greedy(benchmark::State& state) {
  const std::size_t K = 12;
  const int n_r = static_cast<int>(state.range(0));
  const auto m = random_moments(K, 4);
  GuardrailConfig g{10, 1.2, GuardrailMode::point, GuardrailMode::off, BaselineRule::neyman};
  const GuardrailContext ctx{g, neyman_allocation(m, n_r, 10), m, std::nullopt};
  const DesignObjective obj{m, random_query(K, 5).xi, ShrinkageFamily::kappa2};
  for (auto _ : state) benchmark::DoNotOptimize(greedy_optimize(ctx.baseline, obj, ctx, {}).risk);
}
BENCHMARK(BM_Greedy)->Arg(300)->Arg(1000)->Unit(benchmark::kMillisecond);

static void BM_SensitivityBootstrap(benchmark::State& state) {
  std::mt19937_64 eng(6);
  std::uniform_real_distribution<double> p(0.05, 0.95);
  std::bernoulli_distribution y(0.1);
  std::vector<ArmObservation> arm(static_cast<std::size_t>(state.range(0)));
  for (auto& a : arm) a = {static_cast<double>(y(eng)), p(eng)};
  for (auto _ : state) benchmark::DoNotOptimize(gamma_interval(arm, 1.5, 0.05, {1000, 7, 1}).upper);
}
BENCHMARK(BM_SensitivityBootstrap)->Arg(200)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
