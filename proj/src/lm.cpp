#include "w2p/lm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "w2p/errors.hpp"

namespace w2p::lm {

using diff::Binder;
using diff::Tape;
using diff::Var;

bool operator==(const LmConfig& a, const LmConfig& b) {
  return a.vocab_size == b.vocab_size && a.d_model == b.d_model && a.layers == b.layers &&
         a.heads == b.heads && a.d_ff == b.d_ff && a.context == b.context;
}

void EmbeddedSequence::append(const EmbeddedSequence& other) {
  if (size() > 0 && other.size() > 0 && rows.cols() != other.rows.cols())
    throw ShapeError("EmbeddedSequence::append: width mismatch");
  if (size() == 0) {
    rows = other.rows;
  } else if (other.size() > 0) {
    Matrix joined(rows.rows() + other.rows.rows(), rows.cols());
    joined << rows, other.rows;
    rows = std::move(joined);
  }
  roles.insert(roles.end(), other.roles.begin(), other.roles.end());
}

namespace {

std::string layer_name(int l, const char* what) { return "l" + std::to_string(l) + "." + what; }

}  // namespace

void LmArchitecture::add_params(diff::ParamSet& params, bool trainable,
                                std::uint64_t seed) const {
  if (cfg_.d_model % cfg_.heads != 0) throw UsageError("d_model must be divisible by heads");
  std::mt19937_64 rng(seed);
  const int d = cfg_.d_model;
  params.add_weight("tok_emb", cfg_.vocab_size, d, trainable, rng);
  params.add_weight("pos_emb", cfg_.context, d, trainable, rng);
  for (int l = 0; l < cfg_.layers; ++l) {
    params.add_weight(layer_name(l, "qkv"), d, 3 * d, trainable, rng);
    params.add_bias(layer_name(l, "qkv_b"), 3 * d, trainable);
    params.add_weight(layer_name(l, "out"), d, d, trainable, rng);
    params.add_bias(layer_name(l, "out_b"), d, trainable);
    params.add_weight(layer_name(l, "ff1"), d, cfg_.d_ff, trainable, rng);
    params.add_bias(layer_name(l, "ff1_b"), cfg_.d_ff, trainable);
    params.add_weight(layer_name(l, "ff2"), cfg_.d_ff, d, trainable, rng);
    params.add_bias(layer_name(l, "ff2_b"), d, trainable);
  }
  params.add_weight("head", d, cfg_.vocab_size, trainable, rng);
  params.add_bias("head_b", cfg_.vocab_size, trainable);
}

Var LmArchitecture::embed(Tape& tape, Binder& bind, const Tokens& tokens) const {
  for (TokenId t : tokens)
    if (t < 0 || t >= cfg_.vocab_size) throw UsageError("embed: unknown token id " + std::to_string(t));
  return tape.gather_rows(bind("tok_emb"), tokens);
}

Var LmArchitecture::forward(Tape& tape, Binder& bind, Var inputs) const {
  const Eigen::Index n = tape.rows(inputs);
  const int d = cfg_.d_model;
  if (tape.cols(inputs) != d) throw ShapeError("lm forward: input width != d_model");
  if (n == 0) throw DegenerateInputError("lm forward: empty input");
  if (n > cfg_.context)
    throw ContextOverflowError("lm forward: " + std::to_string(n) + " positions exceed context " +
                               std::to_string(cfg_.context));

  const int hd = d / cfg_.heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Var x = tape.add(inputs, tape.slice_rows(bind("pos_emb"), 0, n));
  std::vector<Var> heads(static_cast<std::size_t>(cfg_.heads));
  for (int l = 0; l < cfg_.layers; ++l) {
    Var h = tape.layer_norm_rows(x);
    Var qkv = tape.add(tape.matmul(h, bind(layer_name(l, "qkv"))), bind(layer_name(l, "qkv_b")));
    for (int k = 0; k < cfg_.heads; ++k) {
      Var q = tape.slice_cols(qkv, k * hd, hd);
      Var kk = tape.slice_cols(qkv, d + k * hd, hd);
      Var v = tape.slice_cols(qkv, 2 * d + k * hd, hd);
      Var att = tape.softmax_rows(tape.scale(tape.matmul_nt(q, kk), att_scale), true);
      heads[static_cast<std::size_t>(k)] = tape.matmul(att, v);
    }
    Var o = cfg_.heads == 1 ? heads[0] : tape.concat_cols(heads);
    x = tape.add(x, tape.add(tape.matmul(o, bind(layer_name(l, "out"))),
                             bind(layer_name(l, "out_b"))));
    h = tape.layer_norm_rows(x);
    Var f = tape.relu(
        tape.add(tape.matmul(h, bind(layer_name(l, "ff1"))), bind(layer_name(l, "ff1_b"))));
    x = tape.add(x, tape.add(tape.matmul(f, bind(layer_name(l, "ff2"))),
                             bind(layer_name(l, "ff2_b"))));
  }
  x = tape.layer_norm_rows(x);
  return tape.add(tape.matmul(x, bind("head")), bind("head_b"));
}

FrozenLM::FrozenLM(LmConfig cfg, const diff::ParamSet& trained)
    : arch_(cfg), params_(trained.frozen_copy()), checksum_(params_.checksum()) {
  diff::ParamSet layout;
  arch_.add_params(layout, false, 0);
  if (layout.size() != params_.size()) throw ShapeError("FrozenLM: parameter layout mismatch");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& a = layout[static_cast<diff::ParamId>(i)];
    const auto& b = params_[static_cast<diff::ParamId>(i)];
    if (a.name() != b.name() || a.value().rows() != b.value().rows() ||
        a.value().cols() != b.value().cols())
      throw ShapeError("FrozenLM: parameter layout mismatch at " + a.name());
  }
}

void FrozenLM::verify() const {
  if (params_.checksum() != checksum_)
    throw IntegrityError("frozen LM parameters changed (checksum mismatch)");
}

const Matrix& FrozenLM::embedding_table() const { return params_[params_.id("tok_emb")].value(); }

EmbeddedSequence FrozenLM::embed(const Tokens& tokens, Role role) const {
  const Matrix& table = embedding_table();
  EmbeddedSequence out;
  out.rows.resize(static_cast<Eigen::Index>(tokens.size()), table.cols());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= table.rows())
      throw UsageError("embed: unknown token id " + std::to_string(tokens[i]));
    out.rows.row(static_cast<Eigen::Index>(i)) = table.row(tokens[i]);
  }
  out.roles.assign(tokens.size(), role);
  return out;
}

Matrix FrozenLM::lm_forward(const EmbeddedSequence& seq) const {
  Tape tape;
  Binder bind(tape, params_);
  return tape.value(arch_.forward(tape, bind, tape.constant(seq.rows)));
}

RowVector next_token_dist(const RowVector& logits) {
  const double m = logits.maxCoeff();
  RowVector p = (logits.array() - m).exp().matrix();
  return p / p.sum();
}

void apply_repetition_penalty(RowVector& logits, const Tokens& history, double rho) {
  if (rho == 1.0) return;
  std::vector<bool> seen(static_cast<std::size_t>(logits.size()), false);
  for (TokenId t : history)
    if (t >= 0 && t < logits.size()) seen[static_cast<std::size_t>(t)] = true;
  for (Eigen::Index v = 0; v < logits.size(); ++v) {
    if (!seen[static_cast<std::size_t>(v)]) continue;
    logits(v) = logits(v) > 0 ? logits(v) / rho : logits(v) * rho;
  }
}

namespace {

struct Hypothesis {
  Tokens tokens;
  double logp = 0.0;
  double normalized() const { return logp / static_cast<double>(tokens.size()); }
};

bool better_raw(const Hypothesis& a, const Hypothesis& b) {
  if (a.logp != b.logp) return a.logp > b.logp;
  return a.tokens < b.tokens;
}

bool better_normalized(const Hypothesis& a, const Hypothesis& b) {
  const double sa = a.normalized(), sb = b.normalized();
  if (sa != sb) return sa > sb;
  return a.tokens < b.tokens;
}

RowVector log_softmax(const RowVector& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

}  // namespace

Tokens generate(const FrozenLM& lm, const EmbeddedSequence& prompt, const DecodeConfig& cfg) {
  if (prompt.size() == 0) throw DegenerateInputError("generate: empty prompt");
  if (cfg.beam < 1 || cfg.max_length < 1) throw UsageError("generate: bad decode config");

  const Matrix& table = lm.embedding_table();
  const Eigen::Index d = table.cols();
  const int V = lm.config().vocab_size;

  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> finished;

  for (int step = 0; step < cfg.max_length && !live.empty(); ++step) {
    std::vector<Hypothesis> candidates;
    candidates.reserve(live.size() * static_cast<std::size_t>(V));
    for (const auto& hyp : live) {
      const Eigen::Index n = prompt.size() + 1 + static_cast<Eigen::Index>(hyp.tokens.size());
      Matrix rows(n, d);
      rows.topRows(prompt.size()) = prompt.rows;
      rows.row(prompt.size()) = table.row(Vocabulary::kSos);
      for (std::size_t i = 0; i < hyp.tokens.size(); ++i)
        rows.row(prompt.size() + 1 + static_cast<Eigen::Index>(i)) = table.row(hyp.tokens[i]);

      Tape tape;
      Binder bind(tape, lm.params());
      const Matrix& logits = tape.value(lm.arch().forward(tape, bind, tape.constant(rows)));
      RowVector last = logits.row(n - 1);
      apply_repetition_penalty(last, hyp.tokens, cfg.repetition_penalty);
      const RowVector lp = log_softmax(last);
      for (int v = 0; v < V; ++v) {
        Hypothesis c{hyp.tokens, hyp.logp + lp(v)};
        c.tokens.push_back(v);
        candidates.push_back(std::move(c));
      }
    }
    std::sort(candidates.begin(), candidates.end(), better_raw);

    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < candidates.size() && next.size() < static_cast<std::size_t>(cfg.beam);
         ++i) {
      if (candidates[i].tokens.back() == Vocabulary::kEos) {
        if (i < static_cast<std::size_t>(cfg.beam)) finished.push_back(std::move(candidates[i]));
      } else {
        next.push_back(std::move(candidates[i]));
      }
    }
    live = std::move(next);

    if (!finished.empty()) {
      if (finished.size() >= static_cast<std::size_t>(cfg.beam)) break;
      const auto best = std::min_element(finished.begin(), finished.end(), better_normalized);
      // A live hypothesis can still win only if closing it now would.
      bool open = false;
      for (const auto& h : live)
        if (h.logp / static_cast<double>(h.tokens.size() + 1) > best->normalized()) open = true;
      if (!open) break;
    }
  }

  const std::vector<Hypothesis>& pool = finished.empty() ? live : finished;
  if (pool.empty()) return {};
  Tokens out = std::min_element(pool.begin(), pool.end(), better_normalized)->tokens;
  if (!out.empty() && out.back() == Vocabulary::kEos) out.pop_back();
  return out;
}

Var example_loss(const LmArchitecture& arch, Tape& tape, Binder& bind, const LmExample& ex) {
  const int n = static_cast<int>(ex.tokens.size());
  if (ex.response_begin < 1 || ex.response_begin >= n)
    throw UsageError("example_loss: response must start inside the sequence");
  // Inputs are tokens[0..n-2]; position p predicts tokens[p+1].
  Tokens inputs(ex.tokens.begin(), ex.tokens.end() - 1);
  Var logits = arch.forward(tape, bind, arch.embed(tape, bind, inputs));
  Var lp = tape.log_softmax_rows(logits);
  std::vector<std::pair<int, int>> picks;
  for (int p = ex.response_begin - 1; p < n - 1; ++p) picks.emplace_back(p, ex.tokens[p + 1]);
  return tape.scale(tape.sum(tape.pick(lp, picks)), -1.0 / static_cast<double>(picks.size()));
}

double perplexity(const LmArchitecture& arch, const diff::ParamSet& params,
                  const std::vector<LmExample>& examples, par::Exec exec) {
  if (examples.empty()) throw DegenerateInputError("perplexity: no examples");
  struct Nll {
    double sum = 0.0;
    std::size_t count = 0;
  };
  auto per = par::map_indexed<Nll>(
      examples.size(),
      [&](std::size_t i) {
        Tape tape;
        Binder bind(tape, params);
        const auto& ex = examples[i];
        const double mean = tape.scalar(example_loss(arch, tape, bind, ex));
        const auto count = ex.tokens.size() - static_cast<std::size_t>(ex.response_begin);
        return Nll{mean * static_cast<double>(count), count};
      },
      exec);
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& p : per) {
    total += p.sum;
    count += p.count;
  }
  return std::exp(total / static_cast<double>(count));
}

PretrainResult pretrain(const LmConfig& cfg, const std::vector<LmExample>& train,
                        const std::vector<LmExample>& held_out, const PretrainConfig& pc,
                        std::uint64_t seed) {
  if (train.empty() || held_out.empty()) throw DegenerateInputError("pretrain: empty corpus");
  const LmArchitecture arch(cfg);
  PretrainResult result;
  arch.add_params(result.params, true, seed);
  diff::Adam opt(result.params, diff::AdamConfig{pc.learning_rate});

  std::mt19937_64 shuffle_rng(seed ^ 0x5eed5eedULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  const std::size_t batch = static_cast<std::size_t>(std::max(1, pc.batch_size));
  const std::size_t steps_per_epoch = (order.size() + batch - 1) / batch;
  const double total_steps = static_cast<double>(steps_per_epoch * std::max(1, pc.max_epochs));

  for (int epoch = 1; epoch <= pc.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t n = std::min(batch, order.size() - b);
      // Cosine decay from learning_rate to final_learning_rate.
      const double progress = static_cast<double>(opt.steps()) / total_steps;
      opt.set_learning_rate(pc.final_learning_rate +
                            0.5 * (pc.learning_rate - pc.final_learning_rate) *
                                (1.0 + std::cos(3.14159265358979323846 * progress)));
      auto bg = par::batch_gradients<double>(
          n, result.params,
          [&](std::size_t i) {
            Tape tape;
            Binder bind(tape, result.params);
            Var loss = example_loss(arch, tape, bind, train[order[b + i]]);
            tape.backward(loss);
            return par::ExampleGrad<double>{tape.scalar(loss), bind.gradients()};
          },
          pc.exec);
      bg.grads.scale(1.0 / static_cast<double>(n));
      for (double l : bg.stats) loss_sum += l;
      opt.step(result.params, std::move(bg.grads));
    }
    result.epochs = epoch;
    result.perplexity = perplexity(arch, result.params, held_out, pc.exec);
    if (pc.on_epoch) pc.on_epoch(epoch, loss_sum / static_cast<double>(order.size()), result.perplexity);
    if (result.perplexity <= pc.stop_perplexity) break;
  }
  result.reached_target = result.perplexity <= pc.target_perplexity;
  return result;
}

}  // namespace w2p::lm
