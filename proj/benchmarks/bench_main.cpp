#include <benchmark/benchmark.h>

#include "dlab/analysis.hpp"
#include "dlab/decoding.hpp"
#include "dlab/diffusion.hpp"
#include "dlab/grpo.hpp"
#include "dlab/policy.hpp"
#include "dlab/tasks.hpp"

using namespace dlab;

namespace {

// Default-size model on dag-path instances.
struct Fixture {
  Vocabulary vocab = task_vocabulary(TaskKind::dag_path);
  GeneratedTask task = generate(TaskSpec{}, 8, 1);
  DenoiserParams params;

  Fixture() {
    DenoiserConfig c;
    c.vocab_size = vocab.size();
    params = initial_parameters(c, 1);
  }

  std::vector<TokenId> sequence(std::size_t i) const {
    return clean_sequence(task.corpus[i], 16, vocab.eos_id());
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_Forward(benchmark::State& state) {
  const auto& f = fixture();
  const int batch = static_cast<int>(state.range(0));
  auto seq = f.sequence(0);
  std::vector<TokenId> tokens;
  for (int b = 0; b < batch; ++b) {
    tokens.insert(tokens.end(), seq.begin(), seq.end());
  }
  ForwardCache<float> cache;
  for (auto _ : state) {
    forward(f.params, tokens, batch, cache);
    benchmark::DoNotOptimize(cache.logits.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(16);

void BM_MdmLossAndGrad(benchmark::State& state) {
  const auto& f = fixture();
  auto rng = derive_stream(1, {"bench"});
  for (auto _ : state) {
    auto r = mdm_loss(f.params, f.task.corpus[0], 0.5, 16, f.vocab, rng);
    benchmark::DoNotOptimize(r.loss);
  }
}
BENCHMARK(BM_MdmLossAndGrad);

void BM_Decode(benchmark::State& state) {
  const auto& f = fixture();
  DecodeConfig config;
  config.mode = static_cast<DecodeMode>(state.range(0));
  config.temperature = 0.6;
  config.eb_gamma = 0.5;
  std::uint64_t i = 0;
  for (auto _ : state) {
    auto rng = derive_stream(1, {"bench-decode", i++});
    auto r = decode(f.params, f.task.instances[0].prompt, config, f.vocab, rng);
    benchmark::DoNotOptimize(r.trace.steps);
  }
  state.SetLabel(std::string(to_string(config.mode)));
}
BENCHMARK(BM_Decode)
    ->Arg(static_cast<int>(DecodeMode::ar))
    ->Arg(static_cast<int>(DecodeMode::confidence))
    ->Arg(static_cast<int>(DecodeMode::eb_parallel));

void BM_ArSequenceLogprob(benchmark::State& state) {
  const auto& f = fixture();
  const auto response = pad_response(f.task.corpus[0].response, 16, f.vocab.eos_id());
  for (auto _ : state) {
    auto r = ar_sequence_logprob(f.params, f.task.instances[0].prompt, response, f.vocab);
    benchmark::DoNotOptimize(r.total);
  }
}
BENCHMARK(BM_ArSequenceLogprob);

void BM_GrpoLoss(benchmark::State& state) {
  const auto& f = fixture();
  GRPOConfig config;
  config.group_size = static_cast<int>(state.range(0));
  const auto group = sample_group(f.params, f.task.instances[0], f.vocab, config, 1, 0, 0);
  std::vector<RolloutGroup> groups{group};
  for (auto _ : state) {
    auto loss = grpo_loss(f.params, groups, config, f.vocab);
    benchmark::DoNotOptimize(loss.objective);
  }
}
BENCHMARK(BM_GrpoLoss)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_PassAtK(benchmark::State& state) {
  for (auto _ : state) {
    double s = 0.0;
    for (int c = 0; c <= 64; ++c) {
      s += pass_at_k(64, c, 32);
    }
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_PassAtK);

}  // namespace

BENCHMARK_MAIN();
