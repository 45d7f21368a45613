#include <benchmark/benchmark.h>

#include <random>

#include "nlden/layers.hpp"
#include "nlden/metrics.hpp"
#include "nlden/model.hpp"
#include "nlden/noise.hpp"
#include "nlden/phantom.hpp"

namespace {

nlden::Tensor<float> random_tensor(std::size_t c, std::size_t p, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  nlden::Tensor<float> t(c, p, p, p);
  for (float& v : t.data) v = n(rng);
  return t;
}

void BM_Conv3dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto p = static_cast<std::size_t>(state.range(1));
  const auto in = random_tensor(c, p, 1);
  const auto w = random_tensor(c * c, 3, 2);
  std::vector<float> bias(c, 0.0f);
  nlden::Tensor<float> out;
  nlden::ConvScratch<float> scratch;
  for (auto _ : state) {
    nlden::conv3d_forward<float>(in, w.data, bias, c, 3, out, scratch);
    benchmark::DoNotOptimize(out.data.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(c * c * 27 * p * p * p),
                                               benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv3dForward)->Args({8, 16})->Args({16, 16})->Args({16, 32});

void BM_Conv3dBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto p = static_cast<std::size_t>(state.range(1));
  const auto in = random_tensor(c, p, 1);
  const auto dout = random_tensor(c, p, 3);
  const auto w = random_tensor(c * c, 3, 2);
  std::vector<float> dw(w.data.size()), db(c);
  nlden::Tensor<float> din;
  nlden::ConvScratch<float> scratch;
  for (auto _ : state) {
    nlden::conv3d_backward<float>(in, w.data, 3, dout, &din, dw, db, scratch);
    benchmark::DoNotOptimize(din.data.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(2 * c * c * 27 * p * p * p),
                                               benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv3dBackward)->Args({8, 16})->Args({16, 16})->Args({16, 32});

void BM_NetworkForwardBackward(benchmark::State& state) {
  nlden::ModelConfig cfg;
  cfg.channels = static_cast<std::size_t>(state.range(0));
  cfg.n_orb = static_cast<std::size_t>(state.range(1));
  cfg.n_cab = static_cast<std::size_t>(state.range(2));
  cfg.reduction = 4;
  const auto p = static_cast<std::size_t>(state.range(3));
  const auto params = nlden::init_params(cfg, 7);
  auto grads = params.zeros_like();
  const nlden::Network<float> net(cfg, params);
  nlden::Network<float>::Cache cache;
  const auto in = random_tensor(1, p, 4);
  for (auto _ : state) {
    auto out = net.forward(in, 0.3f, true, cache);
    net.backward(cache, out, grads);
    benchmark::DoNotOptimize(grads[0].values.data());
  }
}
BENCHMARK(BM_NetworkForwardBackward)
    ->Args({8, 1, 2, 16})
    ->Args({8, 2, 2, 16})
    ->Args({16, 2, 2, 16})
    ->Args({16, 2, 2, 32})
    ->Unit(benchmark::kMillisecond);

void BM_Otsu(benchmark::State& state) {
  std::mt19937 rng(5);
  std::poisson_distribution<int> pois(20);
  std::vector<float> v(static_cast<std::size_t>(state.range(0)));
  for (float& x : v) x = static_cast<float>(pois(rng));
  for (auto _ : state) benchmark::DoNotOptimize(nlden::otsu_threshold(v, 256));
}
BENCHMARK(BM_Otsu)->Arg(4096)->Arg(32768);

void BM_Ssim3d(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const nlden::VolumeHeader h{{n, n, n}, {1, 1, 1}, nlden::Domain::SUV, 1.0f};
  const auto a = random_tensor(1, n, 8);
  const auto b = random_tensor(1, n, 9);
  const nlden::Volume va(h, a.data);
  const nlden::Volume vb(h, b.data);
  for (auto _ : state) benchmark::DoNotOptimize(nlden::ssim3d(va, vb));
}
BENCHMARK(BM_Ssim3d)->Arg(48)->Unit(benchmark::kMillisecond);

void BM_PairedDataset(benchmark::State& state) {
  nlden::PhantomSetConfig set;
  set.count = 1;
  set.dims = {48, 48, 48};
  const auto spec = nlden::make_phantom_set(set, 3).front();
  const nlden::CountSimConfig sim;
  for (auto _ : state) benchmark::DoNotOptimize(nlden::make_paired_dataset(spec, sim).reference.size());
}
BENCHMARK(BM_PairedDataset)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
