// Serial reference against the OpenMP path for the two hot loops: one
// minibatch of per-example gradients, and greedy validation decoding.

#include <benchmark/benchmark.h>

#include "w2p/config.hpp"
#include "w2p/lm.hpp"
#include "w2p/synthdata.hpp"
#include "w2p/systems.hpp"
#include "w2p/training.hpp"

namespace {

using namespace w2p;

data::World bench_world() {
  auto dc = cfg::default_config().fixture.data;
  dc.splits = {64, 16, 16};
  dc.lm_train_sentences = 16;
  dc.lm_heldout_sentences = 4;
  return data::World::build(dc);
}

lm::FrozenLM random_lm(const lm::LmConfig& c) {
  diff::ParamSet p;
  lm::LmArchitecture(c).add_params(p, false, 1);
  return lm::FrozenLM(c, p);
}

// Default model sizes with an untrained LM; timing does not depend on weights.
struct Setup {
  cfg::ExperimentConfig c = cfg::default_config();
  data::World world = bench_world();
  lm::FrozenLM lm = random_lm(c.fixture.lm);
  diff::ParamSet params = sys::make_params(sys::System::Wav2Prompt, c.model, c.fixture.lm, 2);
  train::SpeechCorpus corpus{&world.speech,
                             data::build_task_dataset(world, lm::Task::Transcribe, data::Split::AsrTrain).records};

  Setup() = default;
  Setup(const Setup&) = delete;

  static const Setup& get() {
    static const Setup s;
    return s;
  }
};

par::Exec exec_of(const benchmark::State& st) {
  return st.range(0) == 0 ? par::Exec::Serial : par::Exec::OpenMP;
}

void BM_BatchGradients(benchmark::State& st) {
  const Setup& s = Setup::get();
  train::TrainConfig tc;
  const std::size_t n = 16;
  for (auto _ : st) {
    auto bg = par::batch_gradients<double>(
        n, s.params,
        [&](std::size_t i) {
          diff::Tape tape;
          diff::Binder model(tape, s.params);
          diff::Binder lm_bind(tape, s.lm.params());
          const auto o = train::objective(sys::System::Wav2Prompt, tape, model, lm_bind, s.lm, s.c.model,
                                          s.corpus.at(i), tc);
          tape.backward(o.loss);
          return par::ExampleGrad<double>{o.parts.total, model.gradients()};
        },
        exec_of(st));
    benchmark::DoNotOptimize(bg.stats.data());
  }
  st.SetLabel(par::to_string(exec_of(st)));
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * n));
}

void BM_Validate(benchmark::State& st) {
  const Setup& s = Setup::get();
  train::SpeechCorpus val{s.corpus.speech, {s.corpus.records.begin(), s.corpus.records.begin() + 16}};
  lm::DecodeConfig dc;
  dc.beam = 1;
  dc.max_length = 16;
  for (auto _ : st) {
    auto v = train::validate(sys::System::Wav2Prompt, s.c.model, s.lm, s.params, val, dc, exec_of(st));
    benchmark::DoNotOptimize(v.token_accuracy);
  }
  st.SetLabel(par::to_string(exec_of(st)));
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * 16));
}

BENCHMARK(BM_BatchGradients)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Validate)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace

int main(int argc, char** argv) {
  Setup::get();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
