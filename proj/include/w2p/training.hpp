#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "w2p/adam.hpp"
#include "w2p/lm.hpp"
#include "w2p/parallel.hpp"
#include "w2p/synthdata.hpp"
#include "w2p/systems.hpp"

namespace w2p::train {

enum class Regime { AsrTrain, FewShot };

std::string to_string(Regime r);
Regime parse_regime(const std::string& s);

struct LossBreakdown {
  double total = 0.0;
  double ce = 0.0;
  double mse = 0.0;
  double qua = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  std::int64_t steps = 0;  // optimizer steps so far
  LossBreakdown loss;      // mean over the epoch's examples
  double grad_norm = 0.0;  // mean pre-clip norm
  double mean_events = 0.0;
  std::optional<double> val_token_accuracy;
  std::optional<double> val_exact_match;
};

struct TrainConfig {
  Regime regime = Regime::AsrTrain;
  double gamma = 20.0;  // MSE weight, asr-train only
  double mu = 0.05;     // quantity weight
  double learning_rate = 1e-3;
  double final_learning_rate = 1e-4;  // cosine decay target
  int epochs = 10;
  int batch_size = 16;
  std::uint64_t seed = 1;
  double clip_norm = 5.0;
  std::int64_t max_steps = 0;  // stop after this many steps, 0 for no limit
  std::size_t validation_limit = 200;
  lm::DecodeConfig decode;
  par::Exec exec = par::Exec::OpenMP;
  std::function<void(const EpochRecord&)> on_epoch;
};

// One training pair: speech of `transcript` and the answer wanted for `task`.
struct Example {
  Matrix features;
  lm::Tokens transcript;
  lm::Task task = lm::Task::Transcribe;
  lm::Tokens target;
};

// Records rendered to features on demand.
struct SpeechCorpus {
  const data::PseudoSpeechSpec* speech = nullptr;
  std::vector<data::Record> records;

  std::size_t size() const { return records.size(); }
  Example at(std::size_t i) const;
};

// Sum over rows of the per-row mean squared difference. Throws ShapeError
// when the shapes differ.
double mse_loss(const Matrix& s, const Matrix& p);
diff::Var mse_loss(diff::Tape& tape, diff::Var s, diff::Var p);

// Mean negative log-likelihood of `targets`, predicted by logit rows
// first, first + 1, ... Throws ShapeError when the rows run out.
diff::Var ce_loss(diff::Tape& tape, diff::Var logits, int first, const lm::Tokens& targets);

struct Objective {
  diff::Var loss;
  LossBreakdown parts;
  int events = 0;  // payload rows fed to the LM
};

// ce + gamma * mse + mu * qua with firing weights scaled to the transcript
// length and the transcribe template.
Objective train_objective(diff::Tape& tape, diff::Binder& model, diff::Binder& lm_bind,
                          const lm::FrozenLM& lm, const sys::ModelConfig& mc, const Example& ex,
                          const TrainConfig& cfg);

// ce + mu * qua with raw firing weights and the example's task template.
Objective finetune_objective(diff::Tape& tape, diff::Binder& model, diff::Binder& lm_bind,
                             const lm::FrozenLM& lm, const sys::ModelConfig& mc,
                             const Example& ex, const TrainConfig& cfg);

// Cross-entropy only, stacked-frame payload.
Objective encoder_llm_objective(diff::Tape& tape, diff::Binder& model, diff::Binder& lm_bind,
                                const lm::FrozenLM& lm, const sys::ModelConfig& mc,
                                const Example& ex);

// CTC against the transcript; reported in the ce slot.
Objective ctc_objective(diff::Tape& tape, diff::Binder& model, const sys::ModelConfig& mc,
                        const Example& ex);

// The objective `s` trains with under cfg.regime.
Objective objective(sys::System s, diff::Tape& tape, diff::Binder& model, diff::Binder& lm_bind,
                    const lm::FrozenLM& lm, const sys::ModelConfig& mc, const Example& ex,
                    const TrainConfig& cfg);

// Adam moments of the retained parameters.
struct OptimizerState {
  std::int64_t steps = 0;
  std::vector<Matrix> first, second;
};

struct TrainResult {
  diff::ParamSet params;  // best by validation token accuracy, else final
  OptimizerState optimizer;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  std::int64_t steps = 0;
  std::uint64_t lm_checksum = 0;
};

// Validation score of a system on records: generated answers for LM-backed
// systems, CTC transcripts for the cascade.
struct Validation {
  double token_accuracy = 0.0;
  double exact_match = 0.0;
};
Validation validate(sys::System s, const sys::ModelConfig& mc, const lm::FrozenLM& lm,
                    const diff::ParamSet& params, const SpeechCorpus& val,
                    const lm::DecodeConfig& dc, par::Exec exec);

// Adam with global-norm clipping, seeded shuffling and cosine decay. The LM
// checksum is verified before and after; a change throws IntegrityError.
TrainResult run_training(sys::System s, const sys::ModelConfig& mc, const lm::FrozenLM& lm,
                         diff::ParamSet init, const SpeechCorpus& train, const SpeechCorpus& val,
                         const TrainConfig& cfg);

}  // namespace w2p::train
