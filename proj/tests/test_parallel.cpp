#include <gtest/gtest.h>

#include <omp.h>

#include <stdexcept>

#include "tiny.hpp"

using namespace w2p;
using sys::System;

namespace {

struct Threads {
  int saved = omp_get_max_threads();
  explicit Threads(int n) { omp_set_num_threads(n); }
  ~Threads() { omp_set_num_threads(saved); }
};

}  // namespace

TEST(Parallel, MapIndexedKeepsOrder) {
  Threads t(4);
  const auto out = par::map_indexed<int>(100, [](std::size_t i) { return static_cast<int>(i * i); },
                                         par::Exec::OpenMP);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(out[i], static_cast<int>(i * i));
}

TEST(Parallel, MapIndexedRethrows) {
  Threads t(4);
  auto boom = [](std::size_t i) -> int {
    if (i == 37) throw std::runtime_error("boom");
    return 0;
  };
  EXPECT_THROW(par::map_indexed<int>(64, boom, par::Exec::OpenMP), std::runtime_error);
  EXPECT_THROW(par::map_indexed<int>(64, boom, par::Exec::Serial), std::runtime_error);
}

TEST(Parallel, BatchGradientsBitIdentical) {
  Threads t(4);
  const auto w = data::World::build(tiny::world_config());
  const auto lm = tiny::random_lm();
  const auto p = sys::make_params(System::Wav2Prompt, tiny::model(), lm.config(), 2);
  const auto corpus = tiny::corpus(w, lm::Task::Transcribe, data::Split::AsrTrain);
  const auto tc = tiny::quick();
  auto one = [&](std::size_t i) {
    diff::Tape tape;
    diff::Binder model(tape, p);
    diff::Binder lm_bind(tape, lm.params());
    auto obj = train::objective(System::Wav2Prompt, tape, model, lm_bind, lm, tiny::model(), corpus.at(i), tc);
    tape.backward(obj.loss);
    return par::ExampleGrad<double>{obj.parts.total, model.gradients()};
  };
  const auto s = par::batch_gradients<double>(corpus.size(), p, one, par::Exec::Serial);
  const auto o = par::batch_gradients<double>(corpus.size(), p, one, par::Exec::OpenMP);
  EXPECT_EQ(s.stats, o.stats);
  ASSERT_EQ(s.grads.grads.size(), o.grads.grads.size());
  for (std::size_t i = 0; i < s.grads.grads.size(); ++i) EXPECT_EQ(s.grads.grads[i], o.grads.grads[i]);
}

TEST(Parallel, TrainingBitIdentical) {
  Threads t(4);
  const auto w = data::World::build(tiny::world_config());
  const auto lm = tiny::random_lm();
  const auto tr = tiny::corpus(w, lm::Task::Transcribe, data::Split::AsrTrain);
  const auto val = tiny::corpus(w, lm::Task::Transcribe, data::Split::FewShot);
  for (System s : {System::Wav2Prompt, System::EncoderLlm, System::Cascade}) {
    const auto init = sys::make_params(s, tiny::model(), lm.config(), 4);
    auto serial = tiny::quick(par::Exec::Serial), omp = tiny::quick(par::Exec::OpenMP);
    serial.max_steps = omp.max_steps = 8;
    const auto a = train::run_training(s, tiny::model(), lm, init, tr, val, serial);
    const auto b = train::run_training(s, tiny::model(), lm, init, tr, val, omp);
    EXPECT_TRUE(a.params == b.params) << sys::to_string(s);
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      EXPECT_EQ(a.history[i].loss.total, b.history[i].loss.total);
      EXPECT_EQ(a.history[i].val_token_accuracy, b.history[i].val_token_accuracy);
    }
  }
}
