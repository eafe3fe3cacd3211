#include "w2p/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "w2p/ctc.hpp"
#include "w2p/errors.hpp"
#include "w2p/metrics.hpp"

namespace w2p::train {

using diff::Binder;
using diff::Tape;
using diff::Var;
using sys::System;

std::string to_string(Regime r) { return r == Regime::AsrTrain ? "asr-train" : "few-shot"; }

Regime parse_regime(const std::string& s) {
  if (s == "asr-train") return Regime::AsrTrain;
  if (s == "few-shot") return Regime::FewShot;
  throw UsageError("unknown regime: " + s);
}

Example SpeechCorpus::at(std::size_t i) const {
  const auto& r = records.at(i);
  return Example{data::render_pseudo_speech(r.input, *speech, r.speech_seed), r.input, r.task,
                 r.target};
}

double mse_loss(const Matrix& s, const Matrix& p) {
  if (s.rows() != p.rows() || s.cols() != p.cols())
    throw ShapeError("mse_loss: prompt and target shapes differ");
  if (s.cols() == 0) return 0.0;
  return (s - p).array().square().sum() / static_cast<double>(s.cols());
}

Var mse_loss(Tape& tape, Var s, Var p) {
  if (tape.rows(s) != tape.rows(p) || tape.cols(s) != tape.cols(p))
    throw ShapeError("mse_loss: " + std::to_string(tape.rows(s)) + " prompt rows vs " +
                     std::to_string(tape.rows(p)) + " target rows");
  Var d = tape.sub(s, p);
  return tape.scale(tape.sum(tape.mul(d, d)), 1.0 / static_cast<double>(tape.cols(s)));
}

Var ce_loss(Tape& tape, Var logits, int first, const lm::Tokens& targets) {
  if (targets.empty()) throw DegenerateInputError("ce_loss: no targets");
  if (first < 0 || first + static_cast<Eigen::Index>(targets.size()) > tape.rows(logits))
    throw ShapeError("ce_loss: targets run past the logits");
  Var lp = tape.log_softmax_rows(logits);
  std::vector<std::pair<int, int>> picks;
  for (std::size_t i = 0; i < targets.size(); ++i)
    picks.emplace_back(first + static_cast<int>(i), targets[i]);
  return tape.scale(tape.sum(tape.pick(lp, picks)), -1.0 / static_cast<double>(targets.size()));
}

namespace {

// CE of the LM continuing prefix | payload | postfix | [sos] with
// response + [eos].
Var response_ce(Tape& tape, Binder& lm_bind, const lm::FrozenLM& lm, lm::Task task, Var payload,
                const lm::Tokens& response) {
  const auto& tpl = lm::template_for(task);
  Var inputs = sys::lm_inputs(tape, lm_bind, lm.arch(), tpl, payload, response);
  const int first = static_cast<int>(tape.rows(inputs)) - static_cast<int>(response.size()) - 1;
  lm::Tokens targets = response;
  targets.push_back(lm::Vocabulary::kEos);
  return ce_loss(tape, lm.arch().forward(tape, lm_bind, inputs), first, targets);
}

int payload_rows(Tape& tape, Var payload) {
  return payload.valid() ? static_cast<int>(tape.rows(payload)) : 0;
}

}  // namespace

Objective train_objective(Tape& tape, Binder& model, Binder& lm_bind, const lm::FrozenLM& lm,
                          const sys::ModelConfig& mc, const Example& ex, const TrainConfig& cfg) {
  const int m = static_cast<int>(ex.transcript.size());
  if (m == 0) throw DegenerateInputError("train_objective: empty transcript");
  auto sp = sys::speech_prompt(System::Wav2Prompt, mc, tape, model, tape.constant(ex.features), m);
  Var target_rows = lm.arch().embed(tape, lm_bind, ex.transcript);
  Var mse = mse_loss(tape, sp.payload, target_rows);
  Var ce = response_ce(tape, lm_bind, lm, lm::Task::Transcribe, sp.payload, ex.transcript);
  Var qua = cif::quantity_loss(tape, sp.cif->raw_alphas, m);

  Objective o;
  o.loss = tape.add(ce, tape.add(tape.scale(mse, cfg.gamma), tape.scale(qua, cfg.mu)));
  o.parts = {tape.scalar(o.loss), tape.scalar(ce), tape.scalar(mse), tape.scalar(qua)};
  o.events = payload_rows(tape, sp.payload);
  return o;
}

Objective finetune_objective(Tape& tape, Binder& model, Binder& lm_bind, const lm::FrozenLM& lm,
                             const sys::ModelConfig& mc, const Example& ex,
                             const TrainConfig& cfg) {
  const int m = static_cast<int>(ex.transcript.size());
  auto sp = sys::speech_prompt(System::Wav2Prompt, mc, tape, model, tape.constant(ex.features),
                               std::nullopt);
  Var ce = response_ce(tape, lm_bind, lm, ex.task, sp.payload, ex.target);
  Var qua = cif::quantity_loss(tape, sp.cif->raw_alphas, m);

  Objective o;
  o.loss = tape.add(ce, tape.scale(qua, cfg.mu));
  o.parts = {tape.scalar(o.loss), tape.scalar(ce), 0.0, tape.scalar(qua)};
  o.events = payload_rows(tape, sp.payload);
  return o;
}

Objective encoder_llm_objective(Tape& tape, Binder& model, Binder& lm_bind,
                                const lm::FrozenLM& lm, const sys::ModelConfig& mc,
                                const Example& ex) {
  auto sp = sys::speech_prompt(System::EncoderLlm, mc, tape, model, tape.constant(ex.features),
                               std::nullopt);
  Objective o;
  o.loss = response_ce(tape, lm_bind, lm, ex.task, sp.payload, ex.target);
  o.parts.total = o.parts.ce = tape.scalar(o.loss);
  o.events = payload_rows(tape, sp.payload);
  return o;
}

Objective ctc_objective(Tape& tape, Binder& model, const sys::ModelConfig& mc, const Example& ex) {
  if (ex.transcript.empty()) throw DegenerateInputError("ctc_objective: empty transcript");
  Var lp = sys::ctc_log_probs(mc, tape, model, tape.constant(ex.features));
  Objective o;
  o.loss = tape.scale(ctc::loss(tape, lp, ex.transcript),
                      1.0 / static_cast<double>(ex.transcript.size()));
  o.parts.total = o.parts.ce = tape.scalar(o.loss);
  o.events = static_cast<int>(tape.rows(lp));
  return o;
}

Objective objective(System s, Tape& tape, Binder& model, Binder& lm_bind, const lm::FrozenLM& lm,
                    const sys::ModelConfig& mc, const Example& ex, const TrainConfig& cfg) {
  switch (s) {
    case System::Wav2Prompt:
      return cfg.regime == Regime::AsrTrain ? train_objective(tape, model, lm_bind, lm, mc, ex, cfg)
                                            : finetune_objective(tape, model, lm_bind, lm, mc, ex, cfg);
    case System::EncoderLlm:
    case System::FlatStartEncoderLlm:
      return encoder_llm_objective(tape, model, lm_bind, lm, mc, ex);
    case System::Cascade:
      return ctc_objective(tape, model, mc, ex);
    case System::Oracle:
      break;
  }
  throw UsageError("objective: " + sys::to_string(s) + " has nothing to train");
}

Validation validate(System s, const sys::ModelConfig& mc, const lm::FrozenLM& lm,
                    const diff::ParamSet& params, const SpeechCorpus& val,
                    const lm::DecodeConfig& dc, par::Exec exec) {
  auto outputs = par::map_indexed<lm::Tokens>(
      val.size(),
      [&](std::size_t i) {
        const auto& r = val.records[i];
        const Matrix f = data::render_pseudo_speech(r.input, *val.speech, r.speech_seed);
        if (s == System::Cascade) return sys::ctc_transcribe(mc, params, f);
        return sys::infer(s, mc, lm, params, sys::Utterance{f, r.input}, r.task, dc);
      },
      exec);
  std::vector<lm::Tokens> targets;
  for (const auto& r : val.records) targets.push_back(s == System::Cascade ? r.input : r.target);
  const auto m = metrics::summarize(outputs, targets);
  return {m.token_accuracy, m.exact_match};
}

TrainResult run_training(System s, const sys::ModelConfig& mc, const lm::FrozenLM& lm,
                         diff::ParamSet init, const SpeechCorpus& train, const SpeechCorpus& val,
                         const TrainConfig& cfg) {
  if (!sys::is_trainable(s)) throw UsageError("run_training: " + sys::to_string(s) + " is not trainable");
  if (cfg.gamma < 0 || cfg.mu < 0) throw UsageError("run_training: loss weights must be non-negative");
  lm.verify();
  TrainResult result;
  result.lm_checksum = lm.checksum();
  result.params = init;
  if (cfg.epochs <= 0 || train.size() == 0) return result;

  diff::ParamSet params = std::move(init);
  diff::Adam opt(params, diff::AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.clip_norm});
  std::mt19937_64 shuffle_rng(data::derive_seed(cfg.seed, 0, 77));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  SpeechCorpus val_subset{val.speech, {}};
  for (std::size_t i = 0; i < std::min(cfg.validation_limit, val.size()); ++i)
    val_subset.records.push_back(val.records[i]);

  const std::size_t batch = static_cast<std::size_t>(std::max(1, cfg.batch_size));
  const std::size_t per_epoch = (order.size() + batch - 1) / batch;
  double total_steps = static_cast<double>(per_epoch) * cfg.epochs;
  if (cfg.max_steps > 0) total_steps = std::min(total_steps, static_cast<double>(cfg.max_steps));
  double best = -std::numeric_limits<double>::infinity();

  struct Stat {
    LossBreakdown parts;
    int events = 0;
  };

  int epoch = 0;
  auto keep = [&] {
    result.best_epoch = epoch;
    result.params = params;
    result.optimizer = {opt.steps(), opt.first_moments(), opt.second_moments()};
  };
  bool done = false;
  for (epoch = 1; epoch <= cfg.epochs && !done; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t seen = 0, batches = 0;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t n = std::min(batch, order.size() - b);
      const double progress = static_cast<double>(opt.steps()) / total_steps;
      opt.set_learning_rate(cfg.final_learning_rate +
                            0.5 * (cfg.learning_rate - cfg.final_learning_rate) *
                                (1.0 + std::cos(3.14159265358979323846 * progress)));
      auto bg = par::batch_gradients<Stat>(
          n, params,
          [&](std::size_t i) {
            Tape tape;
            Binder model(tape, params);
            Binder lm_bind(tape, lm.params());
            const Objective o = objective(s, tape, model, lm_bind, lm, mc, train.at(order[b + i]), cfg);
            tape.backward(o.loss);
            return par::ExampleGrad<Stat>{Stat{o.parts, o.events}, model.gradients()};
          },
          cfg.exec);
      bg.grads.scale(1.0 / static_cast<double>(n));
      for (const auto& st : bg.stats) {
        rec.loss.total += st.parts.total;
        rec.loss.ce += st.parts.ce;
        rec.loss.mse += st.parts.mse;
        rec.loss.qua += st.parts.qua;
        rec.mean_events += st.events;
      }
      seen += n;
      rec.grad_norm += opt.step(params, std::move(bg.grads));
      ++batches;
      if (cfg.max_steps > 0 && opt.steps() >= cfg.max_steps) {
        done = true;
        break;
      }
    }
    const double k = static_cast<double>(seen);
    rec.loss.total /= k;
    rec.loss.ce /= k;
    rec.loss.mse /= k;
    rec.loss.qua /= k;
    rec.mean_events /= k;
    rec.grad_norm /= static_cast<double>(batches);
    rec.steps = opt.steps();
    if (val_subset.size() > 0) {
      const auto v = validate(s, mc, lm, params, val_subset, cfg.decode, cfg.exec);
      rec.val_token_accuracy = v.token_accuracy;
      rec.val_exact_match = v.exact_match;
      if (v.token_accuracy > best) {
        best = v.token_accuracy;
        keep();
      }
    } else {
      keep();
    }
    result.history.push_back(rec);
    if (cfg.on_epoch) cfg.on_epoch(rec);
  }
  result.steps = opt.steps();
  lm.verify();
  return result;
}

}  // namespace w2p::train
