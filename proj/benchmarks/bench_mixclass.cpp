#include <cmath>

#include <benchmark/benchmark.h>

#include "mixclass/efficiency.hpp"
#include "mixclass/em.hpp"
#include "mixclass/mcmc.hpp"
#include "mixclass/quadrature.hpp"
#include "mixclass/simlab.hpp"

using namespace mixclass;

namespace {

const Scenario& scenario(const char* name) {
  static const ScenarioFile file = load_scenarios(default_scenario_path());
  return file.find(name);
}

Theta truth(const Scenario& sc) {
  Theta t;
  t.alpha0 = sc.alpha0;
  t.alpha1 = sc.alpha1;
  t.beta = sc.beta;
  t.phi = sc.phi;
  t.pi_star = sc.p.matrix().transpose() * sc.pi;
  t.gating = GatingSpec(sc.true_q());
  return t;
}

void BM_MixtureLoglik(benchmark::State& state) {
  const auto& sc = scenario("normal_ordinal_a10");
  const auto gen = generate(sc, static_cast<std::size_t>(state.range(0)), 1);
  const auto spec = sc.model_spec();
  const auto t = truth(sc);
  for (auto _ : state) benchmark::DoNotOptimize(mixture_loglik(spec, t, gen.data));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MixtureLoglik)->Arg(1600)->Arg(25600);

void BM_EmFit(benchmark::State& state) {
  const auto& sc = scenario("normal_ordinal_a4");
  const auto gen = generate(sc, static_cast<std::size_t>(state.range(0)), 2);
  EmConfig cfg;
  cfg.n_restarts = 3;
  for (auto _ : state) benchmark::DoNotOptimize(em_fit(sc.model_spec(), gen.data, cfg).loglik);
}
BENCHMARK(BM_EmFit)->Arg(1600)->Unit(benchmark::kMillisecond);

// One chain of 1000 sweeps after a 1000-sweep burn-in.
void sampler(benchmark::State& state, const char* name) {
  const auto& sc = scenario(name);
  const auto gen = generate(sc, static_cast<std::size_t>(state.range(0)), 3);
  McmcConfig cfg;
  cfg.n_chains = 1;
  cfg.burn_in = 1000;
  cfg.thin = 1;
  cfg.n_kept = 1000;
  cfg.sign_constraint = sc.sign_constraint;
  cfg.init_from_em = false;
  const auto priors = sc.priors_for("");
  for (auto _ : state) benchmark::DoNotOptimize(mcmc_fit(sc.model_spec(), gen.data, priors, cfg).draws.size());
  state.SetItemsProcessed(state.iterations() * 2000);
}
BENCHMARK_CAPTURE(sampler, normal_k3, "normal_ordinal_a10")->Arg(1600)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(sampler, poisson_k2, "poisson_p25")->Arg(1600)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(sampler, zip_k2, "zip_w10")->Arg(1600)->Unit(benchmark::kMillisecond);

void BM_ExpectedFisher(benchmark::State& state) {
  const bool normal = state.range(0) == 0;
  const auto t = binary_theta_from_classification(0.0, 1.0, 1.0, 0.5, 0.1, 0.2);
  const ResponseFamily fam(normal ? FamilyKind::Normal : FamilyKind::Poisson);
  for (auto _ : state) benchmark::DoNotOptimize(asymptotic_covariances(fam, t).rasd2);
}
BENCHMARK(BM_ExpectedFisher)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Integrate(benchmark::State& state) {
  const auto f = [](double x) { return std::exp(-x * x) * std::cos(3.0 * x); };
  for (auto _ : state) benchmark::DoNotOptimize(integrate(f, -8.0, 8.0).value);
}
BENCHMARK(BM_Integrate);

}  // namespace

BENCHMARK_MAIN();
