// Microbenchmarks for the hot paths: the tensor kernel the GRU leans on,
// a full forward step per architecture, one training step (forward +
// backward + Adam-sized batch), beam search as a function of width, and
// the n-gram metric used as the tuning objective.

#include <benchmark/benchmark.h>

#include <vector>

#include "caprnn/dataset.hpp"
#include "caprnn/decoding.hpp"
#include "caprnn/metrics.hpp"
#include "caprnn/model.hpp"
#include "caprnn/rng.hpp"
#include "caprnn/tensor.hpp"
#include "caprnn/training.hpp"
#include "caprnn/vocab.hpp"

namespace {

using namespace caprnn;

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values_mut()) v = static_cast<float>(rng.normal() * 0.1);
  return t;
}

ModelConfig bench_config(ArchitectureKind kind, std::size_t layer_size) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.layer_size = layer_size;
  cfg.vocab_size = 64;
  cfg.image_dim = 128;
  cfg.rnn_init_state = kind == ArchitectureKind::init_inject
                           ? RnnInitState::image
                           : RnnInitState::zeros;
  return cfg;
}

void BM_MatmulVec(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  auto x = random_tensor({n}, rng);
  auto w = random_tensor({n, n}, rng);
  for (auto _ : state) {
    auto y = matmul<float>(nullptr, x, w);
    benchmark::DoNotOptimize(y.values().data());
  }
}
BENCHMARK(BM_MatmulVec)->Arg(64)->Arg(128)->Arg(256)->Arg(512);

// One next-token distribution after a ten-word prefix, per architecture.
void BM_ForwardStep(benchmark::State& state) {
  const auto kind = static_cast<ArchitectureKind>(state.range(0));
  const auto layer = static_cast<std::size_t>(state.range(1));
  auto model = build_model<float>(bench_config(kind, layer), 7);
  Rng rng(2);
  const Tensor img = random_tensor({128}, rng);
  std::vector<TokenId> prefix = {kStartId};
  for (int i = 0; i < 10; ++i)
    prefix.push_back(static_cast<TokenId>(3 + rng.index(61)));
  for (auto _ : state) {
    auto dist = forward_step(model, img, prefix);
    benchmark::DoNotOptimize(dist.values().data());
  }
}
BENCHMARK(BM_ForwardStep)
    ->ArgsProduct({{0, 1, 2, 3}, {128, 256}})
    ->ArgNames({"arch", "layer"});

// One optimizer-sized unit of training work: batch forward, tape backward.
void BM_TrainStep(benchmark::State& state) {
  const auto layer = static_cast<std::size_t>(state.range(0));
  auto model = build_model<float>(
      bench_config(ArchitectureKind::merge, layer), 7);
  Rng rng(3);
  std::vector<CaptionExample> batch(8);
  for (auto& ex : batch) {
    ex.image = random_tensor({128}, rng);
    for (int t = 0; t < 8; ++t)
      ex.caption.push_back(static_cast<TokenId>(3 + rng.index(61)));
  }
  for (auto _ : state) {
    Tape tape;
    Tensor loss = batch_loss<float>(&tape, model, batch);
    model.zero_grads();
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.value(0));
  }
}
BENCHMARK(BM_TrainStep)->Arg(64)->Arg(128)->Arg(256);

// Caption generation cost as the beam widens.
void BM_BeamSearch(benchmark::State& state) {
  auto model = build_model<float>(
      bench_config(ArchitectureKind::merge, 128), 7);
  Rng rng(4);
  const Tensor img = random_tensor({128}, rng);
  BeamParams params;
  params.width = static_cast<std::size_t>(state.range(0));
  params.min_len = 5;
  params.max_len = 20;
  for (auto _ : state) {
    auto words = beam_search(model, img, params);
    benchmark::DoNotOptimize(words.data());
  }
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(3)->Arg(6)->Arg(10);

// The tuning objective over a synthetic corpus of the given size.
void BM_CiderD(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const LoadedData data = generate_synthetic(5, n, 6);
  const auto refs = reference_captions(data.dataset, Split::train);
  std::vector<TokenSeq> cands;
  for (const auto& image_refs : refs) cands.push_back(image_refs.front());
  for (auto _ : state) {
    std::string warning;
    const double score = cider_d(cands, refs, &warning);
    benchmark::DoNotOptimize(score);
  }
}
BENCHMARK(BM_CiderD)->Arg(100)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
