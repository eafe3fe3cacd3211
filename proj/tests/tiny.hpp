#pragma once

// Small models and worlds for fast tests.

#include "w2p/lm.hpp"
#include "w2p/synthdata.hpp"
#include "w2p/systems.hpp"
#include "w2p/training.hpp"

namespace w2p::tiny {

inline lm::LmConfig lm_config() {
  lm::LmConfig c;
  c.d_model = 8;
  c.layers = 1;
  c.heads = 2;
  c.d_ff = 16;
  c.context = 48;
  return c;
}

inline lm::FrozenLM random_lm(std::uint64_t seed = 1) {
  diff::ParamSet p;
  lm::LmArchitecture(lm_config()).add_params(p, false, seed);
  return lm::FrozenLM(lm_config(), p);
}

inline sys::ModelConfig model() {
  sys::ModelConfig mc;
  mc.encoder.d_in = 4;
  mc.encoder.front_channels = 6;
  mc.encoder.d_model = 6;
  mc.encoder.layers = 1;
  mc.encoder.kernel = 3;
  mc.encoder.d_ff = 8;
  return mc;
}

inline data::DataConfig world_config() {
  data::DataConfig c;
  c.splits = {24, 8, 8};
  c.lm_train_sentences = 40;
  c.lm_heldout_sentences = 8;
  c.d_in = 4;
  c.min_duration = 4;
  c.max_duration = 8;
  return c;
}

inline train::SpeechCorpus corpus(const data::World& w, lm::Task task, data::Split split) {
  return {&w.speech, data::build_task_dataset(w, task, split).records};
}

inline train::TrainConfig quick(par::Exec exec = par::Exec::Serial) {
  train::TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.validation_limit = 4;
  tc.decode.beam = 2;
  tc.decode.max_length = 6;
  tc.exec = exec;
  return tc;
}

}  // namespace w2p::tiny
