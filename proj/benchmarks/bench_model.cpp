#include <benchmark/benchmark.h>

#include "ugvae/inference.hpp"
#include "ugvae/numerics.hpp"
#include "ugvae/objective.hpp"
#include "ugvae/trainer.hpp"

using namespace ugvae;

namespace {

NetworkBundle bench_bundle(const BundleDims& dims) {
  RngStream rng(1);
  return init_bundle(dims, rng);
}

Matrix bench_batch(std::size_t rows, std::size_t cols) {
  RngStream rng(2);
  Matrix X(rows, cols);
  for (auto& v : X.data) v = rng.next_double();
  return X;
}

void BM_PreEncoderForward(benchmark::State& state) {
  const BundleDims dims{784, 10, 20, 10, 256};
  const NetworkBundle bundle = bench_bundle(dims);
  const Matrix X = bench_batch(1, 784);
  for (auto _ : state) {
    benchmark::DoNotOptimize(bundle.h.raw(X.row(0)));
  }
}
BENCHMARK(BM_PreEncoderForward);

void BM_ProductOfExperts(benchmark::State& state) {
  RngStream rng(3);
  std::vector<DiagGaussian> contribs;
  for (int i = 0; i < 128; ++i) {
    DiagGaussian g;
    g.mean = rng.gaussians(20);
    g.log_var = rng.gaussians(20);
    contribs.push_back(std::move(g));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(product_of_diag_gaussians(contribs));
  }
}
BENCHMARK(BM_ProductOfExperts);

void BM_InferGroup(benchmark::State& state) {
  const BundleDims dims{784, 10, 20, 10, 256};
  const NetworkBundle bundle = bench_bundle(dims);
  const Matrix X = bench_batch(state.range(0), 784);
  for (auto _ : state) {
    RngStream rng(4);
    benchmark::DoNotOptimize(infer_group(X, bundle, rng));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_InferGroup)->Arg(16)->Arg(128);

void BM_TrainStep(benchmark::State& state) {
  const BundleDims dims{784, 10, 20, 10, 256};
  NetworkBundle bundle = bench_bundle(dims);
  const GenerativeConfig config{dims, 0.2, std::size_t(state.range(0))};
  const Matrix X = bench_batch(state.range(0), 784);
  TrainConfig tc;
  tc.dims = dims;
  AdamOptimizer adam;
  adam.init(bundle);

  for (auto _ : state) {
    RngStream rng(5);
    ad::Tape tape;
    const LossGraph graph = loss(tape, X, bundle, config, rng);
    bundle.zero_grads();
    tape.backward(graph.loss);
    clip_global_norm(bundle, tc.clip_norm);
    adam.step(bundle, tc);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainStep)->Arg(16)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
  benchmark::Initialize(&argc, argv);
  benchmark::RunSpecifiedBenchmarks();
  return 0;
}
