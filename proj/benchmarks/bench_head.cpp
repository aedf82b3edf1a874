#include <benchmark/benchmark.h>

#include <random>

#include "selar/semantic_head.hpp"
#include "selar/trainer.hpp"

using namespace selar;

namespace {

// Backbone-sized head: 7 x 7 x 2048 features, 312 attributes, 200 classes.
struct Workload {
  EmbeddingWeights weights;
  AttributeMatrix attributes;
  LocalFeatureMap features;
};

Workload make_workload(std::size_t side, std::size_t depth, std::size_t attrs, std::size_t classes) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Workload w{init_weights(attrs, depth, 1, 1.0), AttributeMatrix(classes, attrs),
             LocalFeatureMap(side, depth)};
  for (auto& x : w.attributes.data()) x = u(rng);
  w.attributes = normalize_attribute_rows(w.attributes);
  for (auto& x : w.features.data()) x = u(rng);
  return w;
}

PoolingConfig config_of(const benchmark::State& state) {
  return {static_cast<PoolMethod>(state.range(0)), static_cast<PoolSpace>(state.range(1))};
}

}  // namespace

static void BM_Forward(benchmark::State& state) {
  const auto w = make_workload(7, 2048, 312, 200);
  const auto cfg = config_of(state);
  for (auto _ : state) {
    auto trace = forward(w.weights, w.attributes, w.features, cfg);
    benchmark::DoNotOptimize(trace.logits.data());
  }
  state.SetLabel(to_string(cfg));
}

static void BM_ForwardBackward(benchmark::State& state) {
  const auto w = make_workload(7, 2048, 312, 200);
  const auto cfg = config_of(state);
  for (auto _ : state) {
    const auto trace = forward(w.weights, w.attributes, w.features, cfg);
    const auto ce = softmax_cross_entropy(std::span<const float>(trace.logits), 3);
    auto grad = backward(trace, w.features, w.attributes, std::span<const float>(ce.dlogits));
    benchmark::DoNotOptimize(grad.data().data());
  }
  state.SetLabel(to_string(cfg));
}

static void AllConfigs(benchmark::internal::Benchmark* b) {
  for (int m = 0; m < 2; ++m)
    for (int s = 0; s < 3; ++s) b->Args({m, s});
}

BENCHMARK(BM_Forward)->Apply(AllConfigs)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForwardBackward)->Apply(AllConfigs)->Unit(benchmark::kMillisecond);
