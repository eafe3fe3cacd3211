#include "w2p/systems.hpp"

#include <random>
#include <vector>

#include "w2p/ctc.hpp"
#include "w2p/errors.hpp"

namespace w2p::sys {

using diff::Binder;
using diff::Tape;
using diff::Var;

std::string to_string(System s) {
  switch (s) {
    case System::Wav2Prompt:
      return "wav2prompt";
    case System::EncoderLlm:
      return "encoder-llm";
    case System::FlatStartEncoderLlm:
      return "flat-start-encoder-llm";
    case System::Cascade:
      return "cascade";
    case System::Oracle:
      return "oracle";
  }
  return "?";
}

System parse_system(const std::string& s) {
  for (System x : {System::Wav2Prompt, System::EncoderLlm, System::FlatStartEncoderLlm,
                   System::Cascade, System::Oracle})
    if (to_string(x) == s) return x;
  throw UsageError("unknown system: " + s);
}

bool is_trainable(System s) { return s != System::Oracle; }

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.encoder == b.encoder && a.stack == b.stack && a.threshold == b.threshold &&
         a.tail == b.tail;
}

diff::ParamSet make_params(System s, const ModelConfig& mc, const lm::LmConfig& lc,
                           std::uint64_t seed) {
  diff::ParamSet p;
  if (s == System::Oracle) return p;
  const enc::Encoder encoder(mc.encoder);
  encoder.add_params(p, seed);
  std::mt19937_64 rng(seed ^ 0x4eadULL);
  const int d = mc.encoder.d_model;
  switch (s) {
    case System::Wav2Prompt:
      p.add_weight("proj.w", d, lc.d_model, true, rng);
      p.add_bias("proj.b", lc.d_model, true);
      break;
    case System::EncoderLlm:
    case System::FlatStartEncoderLlm:
      if (mc.stack < 1) throw UsageError("stack must be positive");
      p.add_weight("stack.w", mc.stack * d, lc.d_model, true, rng);
      p.add_bias("stack.b", lc.d_model, true);
      break;
    case System::Cascade:
      p.add_weight("ctc.w", d, lc.vocab_size + 1, true, rng);
      p.add_bias("ctc.b", lc.vocab_size + 1, true);
      break;
    case System::Oracle:
      break;
  }
  return p;
}

void copy_encoder(diff::ParamSet& dst, const diff::ParamSet& src) {
  int copied = 0;
  for (const auto& sp : src.params()) {
    if (sp.name().rfind("enc.", 0) != 0) continue;
    const auto id = dst.find(sp.name());
    if (id < 0) throw IntegrityError("copy_encoder: missing " + sp.name());
    auto& dv = dst[id].value();
    if (dv.rows() != sp.value().rows() || dv.cols() != sp.value().cols())
      throw IntegrityError("copy_encoder: shape mismatch at " + sp.name());
    dv = sp.value();
    ++copied;
  }
  if (copied == 0) throw IntegrityError("copy_encoder: source has no encoder parameters");
}

SpeechPrompt speech_prompt(System s, const ModelConfig& mc, Tape& tape, Binder& bind,
                           Var features, std::optional<int> target_length) {
  const enc::Encoder encoder(mc.encoder);
  Var frames = encoder.encode(tape, bind, features);
  const int d = mc.encoder.d_model;
  SpeechPrompt out;
  switch (s) {
    case System::Wav2Prompt: {
      auto c = cif::cif_forward(tape, frames, target_length, mc.threshold, mc.tail);
      if (!c.fire.events.empty())
        out.payload = tape.add(tape.matmul(c.pooled, bind("proj.w")), bind("proj.b"));
      out.cif = std::move(c);
      break;
    }
    case System::EncoderLlm:
    case System::FlatStartEncoderLlm: {
      Var stacked = enc::stack_frames(tape, tape.slice_cols(frames, 0, d), mc.stack);
      out.payload = tape.add(tape.matmul(stacked, bind("stack.w")), bind("stack.b"));
      break;
    }
    default:
      throw UsageError("speech_prompt: " + to_string(s) + " produces no LM payload");
  }
  return out;
}

Var lm_inputs(Tape& tape, Binder& lm_bind, const lm::LmArchitecture& arch,
              const lm::PromptTemplate& tpl, Var payload, const lm::Tokens& response) {
  std::vector<Var> parts;
  if (!tpl.prefix.empty()) parts.push_back(arch.embed(tape, lm_bind, tpl.prefix));
  if (payload.valid()) parts.push_back(payload);
  lm::Tokens tail = tpl.postfix;
  tail.push_back(lm::Vocabulary::kSos);
  tail.insert(tail.end(), response.begin(), response.end());
  parts.push_back(arch.embed(tape, lm_bind, tail));
  return tape.concat_rows(parts);
}

Var ctc_log_probs(const ModelConfig& mc, Tape& tape, Binder& bind, Var features) {
  const enc::Encoder encoder(mc.encoder);
  Var frames = encoder.encode(tape, bind, features);
  Var content = tape.slice_cols(frames, 0, mc.encoder.d_model);
  return tape.log_softmax_rows(tape.add(tape.matmul(content, bind("ctc.w")), bind("ctc.b")));
}

lm::Tokens ctc_transcribe(const ModelConfig& mc, const diff::ParamSet& params,
                          const Matrix& features) {
  Tape tape;
  Binder bind(tape, params);
  return ctc::greedy_decode(tape.value(ctc_log_probs(mc, tape, bind, tape.constant(features))));
}

lm::Tokens oracle_infer(const lm::FrozenLM& lm, const lm::Tokens& text, lm::Task task,
                        const lm::DecodeConfig& dc) {
  const auto& tpl = lm::template_for(task);
  lm::EmbeddedSequence seq = lm.embed(tpl.prefix, lm::Role::Prefix);
  seq.append(lm.embed(text, lm::Role::Payload));
  seq.append(lm.embed(tpl.postfix, lm::Role::Postfix));
  return lm::generate(lm, seq, dc);
}

lm::Tokens infer(System s, const ModelConfig& mc, const lm::FrozenLM& lm,
                 const diff::ParamSet& params, const Utterance& u, lm::Task task,
                 const lm::DecodeConfig& dc) {
  switch (s) {
    case System::Oracle:
      return oracle_infer(lm, u.text, task, dc);
    case System::Cascade:
      return oracle_infer(lm, ctc_transcribe(mc, params, u.features), task, dc);
    default:
      break;
  }
  Tape tape;
  Binder bind(tape, params);
  const SpeechPrompt sp = speech_prompt(s, mc, tape, bind, tape.constant(u.features), std::nullopt);
  const auto& tpl = lm::template_for(task);
  lm::EmbeddedSequence seq = lm.embed(tpl.prefix, lm::Role::Prefix);
  if (sp.payload.valid()) {
    lm::EmbeddedSequence speech;
    speech.rows = tape.value(sp.payload);
    speech.roles.assign(static_cast<std::size_t>(speech.rows.rows()), lm::Role::Speech);
    seq.append(speech);
  }
  seq.append(lm.embed(tpl.postfix, lm::Role::Postfix));
  return lm::generate(lm, seq, dc);
}

}  // namespace w2p::sys
