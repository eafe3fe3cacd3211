#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "w2p/cif.hpp"
#include "w2p/encoder.hpp"
#include "w2p/lm.hpp"
#include "w2p/params.hpp"
#include "w2p/synthdata.hpp"
#include "w2p/tape.hpp"

// The speech-to-LM systems compared in the experiments. Every trainable
// system is an encoder plus one head; the frozen LM is always separate.
namespace w2p::sys {

enum class System { Wav2Prompt, EncoderLlm, FlatStartEncoderLlm, Cascade, Oracle };

std::string to_string(System s);
System parse_system(const std::string& s);  // throws UsageError
bool is_trainable(System s);

struct ModelConfig {
  enc::EncoderConfig encoder;
  int stack = 8;  // encoder frames per Encoder-LLM payload row
  double threshold = 1.0;
  cif::TailPolicy tail = cif::TailPolicy::FireIfHalf;
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

// Head parameters:
//   wav2prompt            proj.w  d_model x d_llm       (pooled CIF vectors -> S)
//   encoder-llm variants  stack.w stack*d_model x d_llm (stacked frames -> S)
//   cascade               ctc.w   d_model x (V+1)       (frames -> CTC labels)
diff::ParamSet make_params(System s, const ModelConfig& mc, const lm::LmConfig& lc,
                           std::uint64_t seed);

// Overwrites every encoder parameter of `dst` with the one of `src`.
void copy_encoder(diff::ParamSet& dst, const diff::ParamSet& src);

struct SpeechPrompt {
  diff::Var payload;  // invalid when no row was produced
  std::optional<cif::CifOutput> cif;
};

// Payload rows for the LM. Wav2Prompt scales its firing weights to
// `target_length` when one is given and uses them raw otherwise.
SpeechPrompt speech_prompt(System s, const ModelConfig& mc, diff::Tape& tape, diff::Binder& bind,
                           diff::Var features, std::optional<int> target_length);

// prefix | payload | postfix | [sos] response, embedded for the LM.
diff::Var lm_inputs(diff::Tape& tape, diff::Binder& lm_bind, const lm::LmArchitecture& arch,
                    const lm::PromptTemplate& tpl, diff::Var payload,
                    const lm::Tokens& response);

// Per-frame CTC log-probabilities, T x (V+1), blank last.
diff::Var ctc_log_probs(const ModelConfig& mc, diff::Tape& tape, diff::Binder& bind,
                        diff::Var features);

// Speech-side inputs of one utterance.
struct Utterance {
  Matrix features;
  lm::Tokens text;  // what was spoken; only the oracle reads it
};

// Full inference with the task's template. Wav2Prompt uses raw weights, the
// cascade decodes greedily and hands its transcript to the LM.
lm::Tokens infer(System s, const ModelConfig& mc, const lm::FrozenLM& lm,
                 const diff::ParamSet& params, const Utterance& u, lm::Task task,
                 const lm::DecodeConfig& dc);

lm::Tokens oracle_infer(const lm::FrozenLM& lm, const lm::Tokens& text, lm::Task task,
                        const lm::DecodeConfig& dc);
lm::Tokens ctc_transcribe(const ModelConfig& mc, const diff::ParamSet& params,
                          const Matrix& features);

}  // namespace w2p::sys
