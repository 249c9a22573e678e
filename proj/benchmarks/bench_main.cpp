#include <benchmark/benchmark.h>

#include "dssl/contrastive.hpp"
#include "dssl/data.hpp"
#include "dssl/distill.hpp"
#include "dssl/pipeline.hpp"

namespace {

using namespace dssl;

Tensor random_batch(std::size_t b, Rng& rng) {
  Tensor t({b, 1, 32, 32});
  for (double& v : t.data()) v = rng.uniform(0, 1);
  return t;
}

void BM_EncoderForward(benchmark::State& state) {
  Rng rng(1);
  const EncoderConfig cfg;
  const EncoderParams enc = init_encoder(cfg, rng);
  const Tensor batch = random_batch(static_cast<std::size_t>(state.range(0)), rng);
  for (auto _ : state) benchmark::DoNotOptimize(encode(enc, cfg, batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncoderForward)->Arg(1)->Arg(32);

void BM_EncoderBackward(benchmark::State& state) {
  Rng rng(2);
  const EncoderConfig cfg;
  EncoderParams enc = init_encoder(cfg, rng);
  const Tensor batch = random_batch(static_cast<std::size_t>(state.range(0)), rng);
  for (auto _ : state) {
    Graph g;
    g.backward(ag::sum(g, encode(g, enc, cfg, batch)));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncoderBackward)->Arg(1)->Arg(32);

void BM_MoCoStep(benchmark::State& state) {
  const TrainConfig cfg;
  const Dataset data = generate_synthetic_dataset(SyntheticSpec::target_default(), 7);
  MoCoState moco = make_moco_state(EncoderConfig{}, AugmentConfig{}, cfg);
  warm_up_queue(moco, data.frames);
  std::size_t step = 0;
  for (auto _ : state) {
    const auto batch = training_batch(data, cfg, step);
    benchmark::DoNotOptimize(moco_train_step(moco, batch, step_seed(cfg.seed, step)));
    ++step;
  }
}
BENCHMARK(BM_MoCoStep)->Unit(benchmark::kMillisecond);

void BM_DistilledStep(benchmark::State& state) {
  const TrainConfig cfg;
  const Dataset data = generate_synthetic_dataset(SyntheticSpec::target_default(), 7);
  MoCoState student = make_moco_state(EncoderConfig{}, AugmentConfig{}, cfg);
  TeacherState teacher = restore_teacher(moco_checkpoint(student), AugmentConfig{}, cfg);
  warm_up_queues(student, teacher, data.frames);
  std::size_t step = 0;
  for (auto _ : state) {
    const auto batch = training_batch(data, cfg, step);
    benchmark::DoNotOptimize(distilled_train_step(student, teacher, batch, step_seed(cfg.seed, step)).total);
    ++step;
  }
}
BENCHMARK(BM_DistilledStep)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
