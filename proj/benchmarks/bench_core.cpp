#include <benchmark/benchmark.h>

#include <random>

#include "fedanchor/anchor.hpp"
#include "fedanchor/experiment.hpp"
#include "fedanchor/losses.hpp"
#include "fedanchor/nn.hpp"

using namespace fedanchor;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (auto& v : m.row(i)) {
      v = n(rng);
    }
  }
  return m;
}

const nn::NetworkSpec kSpec{16, {32, 32}, 4, 16};

void BM_Forward(benchmark::State& state) {
  const auto params = nn::init_params(kSpec, 1);
  const auto batch = random_matrix(static_cast<std::size_t>(state.range(0)), 16, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(nn::forward(params, batch));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(256);

void BM_ForwardBackward(benchmark::State& state) {
  const auto params = nn::init_params(kSpec, 1);
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const auto batch = random_matrix(n, 16, 2);
  const nn::OutputGradient g{random_matrix(n, 4, 3), random_matrix(n, 16, 4)};
  for (auto _ : state) {
    const auto fwd = nn::forward(params, batch);
    benchmark::DoNotOptimize(nn::backward(params, fwd, g));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(256);

void BM_ContrastiveLoss(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const auto z = random_matrix(n, 16, 5);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(i % 4);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(losses::label_contrastive_loss(z, labels, {}));
  }
}
BENCHMARK(BM_ContrastiveLoss)->Arg(32)->Arg(128);

void BM_PseudoLabel(benchmark::State& state) {
  const std::size_t s = static_cast<std::size_t>(state.range(0));
  std::vector<int> labels(s);
  for (std::size_t i = 0; i < s; ++i) {
    labels[i] = static_cast<int>(i % 4);
  }
  const anchor::AnchorEmbeddingTable table(random_matrix(s, 16, 6), labels, 4);
  const auto q = random_matrix(1, 16, 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(anchor::pseudo_label(q.row(0), table));
  }
}
BENCHMARK(BM_PseudoLabel)->Arg(80)->Arg(500);

void BM_Round(benchmark::State& state) {
  experiment::ExperimentConfig cfg;
  cfg.federation.participation_ratio = 0.25;
  cfg.federation.method = static_cast<fed::Method>(state.range(0));
  const auto data = experiment::prepare_data(cfg);
  const auto fcfg = cfg.federation_config();
  const auto init = experiment::initial_model(cfg, data);
  for (auto _ : state) {
    fed::SimulationState sim{init, 0};
    benchmark::DoNotOptimize(fed::run_round(data.federation, sim, fcfg));
  }
  state.SetLabel(std::string(fed::to_string(cfg.federation.method)));
}
BENCHMARK(BM_Round)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
