// SPDX-License-Identifier: Apache-2.0
// Microbenchmarks of the hot paths: range coding, windowed attention and the
// distortion metrics.
#include "pvqc/attention.hpp"
#include "pvqc/entropy_models.hpp"
#include "pvqc/objectives.hpp"
#include "pvqc/range_coder.hpp"
#include "pvqc/swin_block.hpp"
#include "pvqc/window.hpp"

#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include <cmath>
#include <random>

using namespace pvqc;

namespace {

struct GaussianStream {
  std::vector<std::int32_t> values, indexes;
};

// Symbols drawn from the Gaussian table bank at log-uniform scales.
GaussianStream gaussian_stream(const entropy::GaussianConditionalTables& tables, size_t n) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> log_sigma(std::log(0.11), std::log(32.0));
  std::normal_distribution<double> normal;
  GaussianStream s;
  for (size_t i = 0; i < n; ++i) {
    const double sigma = std::exp(log_sigma(rng));
    s.values.push_back(static_cast<std::int32_t>(std::nearbyint(sigma * normal(rng))));
    s.indexes.push_back(tables.index_for(static_cast<float>(sigma)));
  }
  return s;
}

void BM_RangeEncode(benchmark::State& state) {
  static const entropy::GaussianConditionalTables tables;
  const auto s = gaussian_stream(tables, static_cast<size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(entropy::encode_symbols(s.values, s.indexes, tables.tables()));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RangeEncode)->Arg(1 << 12)->Arg(1 << 16);

void BM_RangeDecode(benchmark::State& state) {
  static const entropy::GaussianConditionalTables tables;
  const auto s = gaussian_stream(tables, static_cast<size_t>(state.range(0)));
  const auto bytes = entropy::encode_symbols(s.values, s.indexes, tables.tables());
  for (auto _ : state) {
    benchmark::DoNotOptimize(entropy::decode_symbols(bytes, s.indexes, tables.tables()));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RangeDecode)->Arg(1 << 12)->Arg(1 << 16);

// One STB on a [1, side, side, 48] grid, with and without prompts.
void BM_SwinBlock(benchmark::State& state) {
  torch::manual_seed(2);
  torch::NoGradGuard guard;
  const int64_t side = state.range(0);
  const bool prompted = state.range(1) != 0;
  wt::SwinBlock block(wt::StbConfig{2, 48, 3, 4, 2.0});
  auto grid = torch::randn({1, side, side, 48});
  wt::BlockConditioning cond;
  if (prompted) {
    const auto [ph, pw] = wt::SwinBlockImpl::prompt_extent(side, side);
    auto p = torch::randn({1, ph, pw, 48});
    cond.prompts = {p, p};
  }
  for (auto _ : state) benchmark::DoNotOptimize(block->forward(grid, cond));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_SwinBlock)->Args({16, 0})->Args({16, 1})->Args({32, 0})->Args({32, 1});

void BM_MsSsim(benchmark::State& state) {
  torch::manual_seed(3);
  torch::NoGradGuard guard;
  const int64_t side = state.range(0);
  auto x = torch::rand({1, 3, side, side});
  auto y = (x + 0.05 * torch::randn_like(x)).clamp(0, 1);
  for (auto _ : state) benchmark::DoNotOptimize(obj::ms_ssim(x, y));
}
BENCHMARK(BM_MsSsim)->Arg(64)->Arg(256);

void BM_Perceptual(benchmark::State& state) {
  torch::manual_seed(4);
  torch::NoGradGuard guard;
  const int64_t side = state.range(0);
  auto x = torch::rand({1, 3, side, side});
  auto y = (x + 0.05 * torch::randn_like(x)).clamp(0, 1);
  for (auto _ : state) benchmark::DoNotOptimize(obj::perceptual_distance(x, y));
}
BENCHMARK(BM_Perceptual)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
