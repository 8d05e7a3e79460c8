#include <benchmark/benchmark.h>

#include "vlmq/contrastiveness.hpp"
#include "vlmq/metrics.hpp"
#include "vlmq/random.hpp"

using namespace vlmq;

static void BM_Ece(benchmark::State& state) {
  Rng rng(1);
  std::vector<metrics::ScoredInstance> xs(static_cast<std::size_t>(state.range(0)));
  for (auto& x : xs) {
    x.score = rng.uniform01();
    x.correct = rng.uniform01() < x.score;
  }
  for (auto _ : state) benchmark::DoNotOptimize(metrics::ece(xs).ece);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Ece)->Arg(64)->Arg(1000)->Arg(100000);

static void BM_MaskAnswers(benchmark::State& state) {
  std::string text;
  for (int i = 0; i < state.range(0); ++i) text += "The ice cream with cream and icing sits on butter. ";
  std::vector<std::string> answers{"butter", "mayo", "ice cream", "icing", "cream"};
  for (auto _ : state) benchmark::DoNotOptimize(contr::mask_answers(text, answers));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(text.size()));
}
BENCHMARK(BM_MaskAnswers)->Arg(1)->Arg(100);

static void BM_Bootstrap(benchmark::State& state) {
  Rng rng(2);
  std::vector<metrics::Judgment> a(300), b(300);
  for (auto* v : {&a, &b}) {
    for (auto& j : *v) j = {static_cast<metrics::Choice>(rng.index(3)), rng.index(2) == 0};
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(metrics::bootstrap_significance(a, b, metrics::RelianceMetric::user_accuracy,
                                                             static_cast<std::size_t>(state.range(0)), 7));
  }
}
BENCHMARK(BM_Bootstrap)->Arg(1000)->Arg(10000);

BENCHMARK_MAIN();
