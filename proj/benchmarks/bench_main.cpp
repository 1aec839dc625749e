#include <benchmark/benchmark.h>
#include <malloc.h>

#include <random>

#include "lmda/dataio.hpp"
#include "lmda/interpret.hpp"
#include "lmda/model.hpp"
#include "lmda/sigproc.hpp"
#include "lmda/train.hpp"

namespace {

using namespace lmda;

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) v = g(rng);
  return t;
}

ModelConfig erd_config() {
  ModelConfig c;
  c.n_channels = 8;
  c.n_samples = 500;
  c.fs_hz = 250.0;
  c.n_train = 200;
  return c;
}

// Depthwise temporal convolution at the model's training shape.
void BM_DepthwiseTemporalConv(benchmark::State& state) {
  const Tensor x = random_tensor({32, 24, 8, 500}, 1);
  const Tensor k = random_tensor({24, 1, 1, 75}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, 24));
}
BENCHMARK(BM_DepthwiseTemporalConv)->Unit(benchmark::kMillisecond);

void BM_PointwiseConv(benchmark::State& state) {
  const Tensor x = random_tensor({32, 24, 8, 426}, 3);
  const Tensor k = random_tensor({9, 24, 1, 1}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k));
}
BENCHMARK(BM_PointwiseConv)->Unit(benchmark::kMillisecond);

void BM_ModelInference(benchmark::State& state) {
  const LmdaModel m(erd_config());
  const Tensor x = random_tensor({static_cast<std::size_t>(state.range(0)), 1, 8, 500}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(m.infer(x).logits);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ModelInference)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

// One optimizer step: forward, cross-entropy, backward.
void BM_TrainingStep(benchmark::State& state) {
  LmdaModel m(erd_config());
  const Tensor x = random_tensor({32, 1, 8, 500}, 6);
  std::vector<int> labels(32);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 2);
  for (auto _ : state) {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(train::cross_entropy(m.forward(x, true), labels));
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_TrainingStep)->Unit(benchmark::kMillisecond);

void BM_BandpassDesign(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(sigproc::design_bandpass(200, 4.0, 38.0, 250.0));
}
BENCHMARK(BM_BandpassDesign);

void BM_BandpassFilter(benchmark::State& state) {
  const TrialSet x = dataio::synth_erd(50, 22, 1125, 250.0, 0);
  const auto f = sigproc::design_bandpass(200, 4.0, 38.0, 250.0);
  for (auto _ : state) benchmark::DoNotOptimize(sigproc::filter_trials(x, f));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(x.n_trials));
}
BENCHMARK(BM_BandpassFilter)->Unit(benchmark::kMillisecond);

void BM_EuclideanAlign(benchmark::State& state) {
  const TrialSet x = dataio::synth_erd(50, 22, 1125, 250.0, 0);
  for (auto _ : state) benchmark::DoNotOptimize(sigproc::euclidean_align(x));
}
BENCHMARK(BM_EuclideanAlign)->Unit(benchmark::kMillisecond);

// Pure noise would have nearly tied singular values and need thousands of
// power iterations; trained feature maps carry a dominant component.
void BM_EigenCam(benchmark::State& state) {
  Tensor f = random_tensor({16, 24, 8, 426}, 7);
  const Tensor u = random_tensor({24}, 8), m = random_tensor({16, 8 * 426}, 9);
  auto fs = f.mutable_data();
  for (std::size_t n = 0; n < 16; ++n)
    for (std::size_t d = 0; d < 24; ++d)
      for (std::size_t k = 0; k < 8 * 426; ++k)
        fs[(n * 24 + d) * 8 * 426 + k] += 3.0 * u.data()[d] * m.data()[n * 8 * 426 + k];
  for (auto _ : state) benchmark::DoNotOptimize(interpret::eigen_cam(f, 8, 500));
}
BENCHMARK(BM_EigenCam)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 512 << 20);
  mallopt(M_TRIM_THRESHOLD, 1024 << 20);
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
