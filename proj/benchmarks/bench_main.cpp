#include <random>

#include <benchmark/benchmark.h>

#include "planeloc/agent/q_network.hpp"
#include "planeloc/agent/replay.hpp"
#include "planeloc/eval.hpp"
#include "planeloc/phantom.hpp"

using namespace planeloc;

namespace {

const PhantomCase& phantom() {
  static const PhantomCase c = [] {
    PhantomSpec s;
    s.seed = 1;
    s.dims = {64, 64, 64};
    return generate(s, 0);
  }();
  return c;
}

void BM_ExtractSlice(benchmark::State& state) {
  const PhantomCase& c = phantom();
  const int size = static_cast<int>(state.range(0));
  const PlaneParams p(60.0, 50.0, 55.0, 3.0);
  for (auto _ : state) benchmark::DoNotOptimize(extract_slice(c.volume, p, size));
}
BENCHMARK(BM_ExtractSlice)->Arg(32)->Arg(64);

void BM_QValues(benchmark::State& state) {
  const PhantomCase& c = phantom();
  agent::QNetwork net(agent::QNetworkSpec::desk(), 32, 1);
  const auto slice = std::make_shared<const SliceImage>(extract_slice(c.volume, c.plane("spheres"), 32));
  const AgentState s = initial_state(slice);
  for (auto _ : state) benchmark::DoNotOptimize(net.q_values(s));
}
BENCHMARK(BM_QValues);

void BM_ReplaySample(benchmark::State& state) {
  std::mt19937_64 rng(1);
  agent::PrioritizedBuffer buf(15000, 0.6);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int i = 0; i < 15000; ++i) buf.add(agent::Transition{}, u(rng));
  for (auto _ : state) benchmark::DoNotOptimize(buf.sample(4, 0.4, rng));
}
BENCHMARK(BM_ReplaySample);

void BM_Ssim(benchmark::State& state) {
  const PhantomCase& c = phantom();
  const SliceImage a = extract_slice(c.volume, c.plane("spheres"), 64);
  const SliceImage b = extract_slice(c.volume, PlaneParams(80.0, 85.0, 12.0, 1.0), 64);
  for (auto _ : state) benchmark::DoNotOptimize(eval::ssim(a, b));
}
BENCHMARK(BM_Ssim);

void BM_GeneratePhantom(benchmark::State& state) {
  PhantomSpec s;
  s.dims = {32, 32, 32};
  s.max_translation_vox = 1.5;
  for (auto _ : state) benchmark::DoNotOptimize(generate(s, 0));
}
BENCHMARK(BM_GeneratePhantom);

}  // namespace

BENCHMARK_MAIN();
