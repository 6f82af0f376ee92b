#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "metricgrids/extrapolation_decoder.hpp"
#include "metricgrids/metric_encoding.hpp"

namespace mg = metricgrids;

namespace {

mg::GridStructure image_grid(int grids) {
  mg::GridStructure g;
  g.dims = 2;
  g.metrics = {mg::MetricKind::linear(), mg::MetricKind::sin_warp(),
               mg::MetricKind::arcsin_warp()};
  g.metrics.resize(static_cast<std::size_t>(grids));
  g.levels = 13;
  g.max_res = 128;
  g.log2_table = 13;
  return g;
}

std::vector<float> random_coords(std::size_t n, int dims) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  std::vector<float> x(n * static_cast<std::size_t>(dims));
  for (auto& v : x) v = u(rng);
  return x;
}

void BM_EncodeBatch(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  mg::MetricGridSet<float> grid(image_grid(static_cast<int>(state.range(1))));
  grid.init_uniform(1);
  const auto x = random_coords(n, 2);
  std::vector<float> features(n * static_cast<std::size_t>(grid.feature_width()));
  mg::EncodingCache<float> cache;
  for (auto _ : state) {
    grid.encode_batch(x, n, features, cache);
    benchmark::DoNotOptimize(features.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(BM_EncodeBatch)->Args({4096, 1})->Args({4096, 3});

void BM_EncodeBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  mg::MetricGridSet<float> grid(image_grid(3));
  grid.init_uniform(1);
  const auto x = random_coords(n, 2);
  std::vector<float> features(n * static_cast<std::size_t>(grid.feature_width()));
  mg::EncodingCache<float> cache;
  grid.encode_batch(x, n, features, cache);
  std::vector<float> grad(grid.params().size());
  for (auto _ : state) {
    grid.backward_batch(cache, features, grad);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(BM_EncodeBackward)->Arg(4096);

void BM_Decode(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  mg::DecoderShape s;
  s.grids = 3;
  s.grid_width = 26;
  const auto p = mg::init_decoder<float>(s, 1);
  mg::DecoderParams<float>::Matrix x =
      mg::DecoderParams<float>::Matrix::Random(s.input_width(), n);
  mg::DecoderParams<float>::Matrix y, up, fg;
  mg::DecoderCache<float> cache;
  std::vector<float> grad(p.size());
  const bool backward = state.range(1) != 0;
  for (auto _ : state) {
    mg::decode_forward_batch(p, x, y, cache);
    if (backward) {
      up = y;
      mg::decode_backward_batch(p, cache, up, std::span<float>(grad), fg);
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * n);
}
BENCHMARK(BM_Decode)->Args({4096, 0})->Args({4096, 1});

}  // namespace
BENCHMARK_MAIN();
