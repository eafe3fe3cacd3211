#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "w2p/adam.hpp"
#include "w2p/matrix.hpp"
#include "w2p/params.hpp"
#include "w2p/parallel.hpp"
#include "w2p/tape.hpp"
#include "w2p/vocab.hpp"

namespace w2p::lm {

struct LmConfig {
  int vocab_size = Vocabulary::kSize;
  int d_model = 32;
  int layers = 2;
  int heads = 2;
  int d_ff = 128;
  int context = 128;
};

bool operator==(const LmConfig& a, const LmConfig& b);

enum class Role { Prefix, Payload, Postfix, Response, Speech, Text };

// Rows fed to the LM, one role tag per row.
struct EmbeddedSequence {
  Matrix rows;
  std::vector<Role> roles;

  Eigen::Index size() const { return rows.rows(); }
  void append(const EmbeddedSequence& other);
};

// Parameter layout and forward pass of the decoder-only model. Holds no
// parameter values itself; every call takes the ParamSet to read from.
class LmArchitecture {
 public:
  explicit LmArchitecture(LmConfig cfg) : cfg_(cfg) {}

  const LmConfig& config() const { return cfg_; }

  // Adds every LM parameter to `params` in a fixed order.
  void add_params(diff::ParamSet& params, bool trainable, std::uint64_t seed) const;

  // Table rows of `tokens`, no position information.
  diff::Var embed(diff::Tape& tape, diff::Binder& bind, const Tokens& tokens) const;

  // N x d inputs -> N x V logits. Learned absolute positions are added here,
  // then causal self-attention blocks. Throws ContextOverflowError when N
  // exceeds the context window.
  diff::Var forward(diff::Tape& tape, diff::Binder& bind, diff::Var inputs) const;

 private:
  LmConfig cfg_;
};

// The pretrained model, immutable after construction. The checksum taken at
// construction is re-verified on demand.
class FrozenLM {
 public:
  FrozenLM(LmConfig cfg, const diff::ParamSet& trained);

  const LmConfig& config() const { return arch_.config(); }
  const LmArchitecture& arch() const { return arch_; }
  const diff::ParamSet& params() const { return params_; }
  std::uint64_t checksum() const { return checksum_; }
  // Throws IntegrityError if the parameters no longer match the checksum.
  void verify() const;

  const Matrix& embedding_table() const;
  // Throws UsageError on an id outside the vocabulary.
  EmbeddedSequence embed(const Tokens& tokens, Role role = Role::Text) const;
  Matrix lm_forward(const EmbeddedSequence& seq) const;

 private:
  LmArchitecture arch_;
  diff::ParamSet params_;
  std::uint64_t checksum_;
};

// Softmax of one logit row.
RowVector next_token_dist(const RowVector& logits);

struct DecodeConfig {
  int beam = 5;
  double repetition_penalty = 1.5;
  int max_length = 24;  // generated tokens, [eos] included
};

// Penalises logits of tokens already in the hypothesis: positive logits are
// divided by rho, the rest multiplied.
void apply_repetition_penalty(RowVector& logits, const Tokens& history, double rho);

// Beam search from prompt rows (prefix | payload | postfix). [sos] is
// appended internally. Hypotheses are ranked by summed log-probability
// divided by their length; ties break towards lower token ids. Returns the
// generated tokens without [eos]. Throws DegenerateInputError on an empty
// prompt.
Tokens generate(const FrozenLM& lm, const EmbeddedSequence& prompt, const DecodeConfig& cfg);

// One pretraining sequence: the loss covers positions >= response_begin.
struct LmExample {
  Tokens tokens;
  int response_begin = 0;  // index of the first predicted token
};

struct PretrainConfig {
  int max_epochs = 12;
  int batch_size = 32;
  double learning_rate = 3e-3;
  double final_learning_rate = 3e-4;
  double target_perplexity = 1.35;  // usability gate on held-out responses
  double stop_perplexity = 1.0;  // stop early once held-out perplexity is this low
  par::Exec exec = par::Exec::OpenMP;
  // Called after every epoch with (epoch, train loss, held-out perplexity).
  std::function<void(int, double, double)> on_epoch;
};

struct PretrainResult {
  diff::ParamSet params;
  double perplexity = 0.0;
  int epochs = 0;
  bool reached_target = false;
};

// Mean next-token cross-entropy of one example over its response positions.
diff::Var example_loss(const LmArchitecture& arch, diff::Tape& tape, diff::Binder& bind,
                       const LmExample& ex);

double perplexity(const LmArchitecture& arch, const diff::ParamSet& params,
                  const std::vector<LmExample>& examples, par::Exec exec);

PretrainResult pretrain(const LmConfig& cfg, const std::vector<LmExample>& train,
                        const std::vector<LmExample>& held_out, const PretrainConfig& pc,
                        std::uint64_t seed);

}  // namespace w2p::lm
