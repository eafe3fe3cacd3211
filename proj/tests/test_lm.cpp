#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "w2p/errors.hpp"
#include "w2p/lm.hpp"
#include "w2p/synthdata.hpp"

using namespace w2p;
using namespace w2p::lm;

namespace {

LmConfig small(int vocab = Vocabulary::kSize) {
  LmConfig c;
  c.vocab_size = vocab;
  c.d_model = 8;
  c.layers = 1;
  c.heads = 2;
  c.d_ff = 16;
  c.context = 16;
  return c;
}

FrozenLM random_lm(const LmConfig& c, std::uint64_t seed, double head_scale = 1.0) {
  diff::ParamSet p;
  LmArchitecture(c).add_params(p, true, seed);
  p[p.id("head")].value() *= head_scale;
  return FrozenLM(c, p);
}

}  // namespace

TEST(Lm, EmbedLooksUpTableRows) {
  const auto lm = random_lm(small(), 1);
  EXPECT_EQ(lm.embed({}).rows.rows(), 0);
  EXPECT_EQ(lm.embed({}).rows.cols(), 8);
  EXPECT_EQ(RowVector(lm.embed({Vocabulary::kSos}).rows.row(0)),
            RowVector(lm.embedding_table().row(Vocabulary::kSos)));
  const Tokens ab = vocab().encode("ab");
  const auto e = lm.embed(ab);
  const Matrix& table = lm.params()[lm.params().id("tok_emb")].value();
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 8; ++j) EXPECT_EQ(e.rows(i, j), table(ab[static_cast<std::size_t>(i)], j));
  EXPECT_THROW(lm.embed({40}), UsageError);
}

TEST(Lm, ForwardShapesAndOrderSensitivity) {
  const auto lm = random_lm(small(), 2);
  const Matrix one = lm.lm_forward(lm.embed({Vocabulary::kSos}));
  ASSERT_EQ(one.rows(), 1);
  EXPECT_NEAR(next_token_dist(one.row(0)).sum(), 1.0, 1e-12);

  const Tokens ab = vocab().encode("ab"), ba = vocab().encode("ba");
  const Matrix lab = lm.lm_forward(lm.embed(ab)), lba = lm.lm_forward(lm.embed(ba));
  EXPECT_FALSE(lab.row(1).isApprox(lba.row(1), 1e-9));
  const Tokens aa = vocab().encode("aa");
  EXPECT_EQ(lm.lm_forward(lm.embed(aa)), lm.lm_forward(lm.embed(aa)));

  EXPECT_THROW(lm.lm_forward(lm.embed(Tokens(17, 3))), ContextOverflowError);
}

TEST(Lm, NextTokenDistribution) {
  const RowVector uniform = next_token_dist(RowVector::Zero(40));
  for (int i = 0; i < 40; ++i) EXPECT_DOUBLE_EQ(uniform(i), 0.025);
  RowVector spike = RowVector::Zero(40);
  spike(7) = 1e6;
  EXPECT_NEAR(next_token_dist(spike)(7), 1.0, 1e-15);
  RowVector ramp(6);
  std::vector<double> z;
  for (int i = 0; i < 6; ++i) z.push_back(ramp(i) = i + 1.0);
  const auto ref = oracle::softmax(z);
  const RowVector p = next_token_dist(ramp);
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(p(i), ref[static_cast<std::size_t>(i)], 1e-15);
}

TEST(Lm, RepetitionPenalty) {
  RowVector l(4);
  l << 2.0, -1.0, 3.0, 0.5;
  RowVector same = l;
  apply_repetition_penalty(same, {0, 1}, 1.0);
  EXPECT_EQ(same, l);
  apply_repetition_penalty(l, {0, 1, 1}, 2.0);
  EXPECT_DOUBLE_EQ(l(0), 1.0);
  EXPECT_DOUBLE_EQ(l(1), -2.0);
  EXPECT_DOUBLE_EQ(l(2), 3.0);
}

TEST(Lm, ForcedLogitsDecodeUnderAnyBeam) {
  // Blocks switched off, zero token embeddings, one-hot positions: the
  // logits at position p depend only on p and spell the chosen tokens.
  LmConfig c = small();
  c.context = 8;
  diff::ParamSet p;
  LmArchitecture(c).add_params(p, true, 3);
  for (std::size_t i = 0; i < p.size(); ++i) p[static_cast<diff::ParamId>(i)].value().setZero();
  Matrix& pos = p[p.id("pos_emb")].value();
  pos = Matrix::Identity(8, 8);
  const int d = 8;
  const double sd = std::sqrt((1.0 / d) * (1.0 - 1.0 / d));
  Matrix& head = p[p.id("head")].value();
  const int P = 2;  // prompt rows; [sos] sits at P
  const Tokens want = {vocab().id("o"), vocab().id("k"), Vocabulary::kEos};
  for (std::size_t k = 0; k < want.size(); ++k) {
    RowVector u = RowVector::Constant(d, -1.0 / d);
    u(P + static_cast<int>(k)) += 1.0;
    head.col(want[k]) += 10.0 * (u / sd).transpose();
  }
  FrozenLM lm(c, p);
  EmbeddedSequence prompt;
  prompt.rows = Matrix::Zero(P, d);
  prompt.roles.assign(P, Role::Text);
  for (int beam : {1, 2, 5}) {
    DecodeConfig dc;
    dc.beam = beam;
    dc.max_length = 5;
    EXPECT_EQ(vocab().decode(generate(lm, prompt, dc)), "ok") << "beam " << beam;
  }
  EXPECT_THROW(generate(lm, EmbeddedSequence{}, DecodeConfig{}), DegenerateInputError);
}

TEST(Lm, WideBeamEqualsExhaustiveSearch) {
  // Length-normalised best sequence of at most four tokens, [eos] included,
  // found by walking every prefix. A beam as wide as the whole search space
  // must find it every time.
  const LmConfig c = small(8);
  const auto lm = random_lm(c, 4, 4.0);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  DecodeConfig dc;
  dc.max_length = 4;
  dc.beam = 512;
  dc.repetition_penalty = 1.0;
  int agree = 0;
  for (int trial = 0; trial < 100; ++trial) {
    EmbeddedSequence prompt;
    prompt.rows.resize(3, c.d_model);
    for (auto& x : prompt.rows.reshaped()) x = n(rng);
    prompt.roles.assign(3, Role::Text);

    double best = -1e300;
    Tokens best_seq;
    std::vector<std::pair<Tokens, double>> frontier{{{}, 0.0}};
    for (int len = 0; len < 4; ++len) {
      std::vector<std::pair<Tokens, double>> next;
      for (const auto& [prefix, lp] : frontier) {
        Matrix rows(3 + 1 + static_cast<Eigen::Index>(prefix.size()), c.d_model);
        rows.topRows(3) = prompt.rows;
        rows.row(3) = lm.embedding_table().row(Vocabulary::kSos);
        for (std::size_t i = 0; i < prefix.size(); ++i)
          rows.row(4 + static_cast<Eigen::Index>(i)) = lm.embedding_table().row(prefix[i]);
        const Matrix logits = lm.lm_forward(EmbeddedSequence{rows, {}});
        std::vector<double> z(logits.cols());
        for (int v = 0; v < logits.cols(); ++v) z[static_cast<std::size_t>(v)] = logits(logits.rows() - 1, v);
        const auto prob = oracle::softmax(z);
        for (int v = 0; v < c.vocab_size; ++v) {
          Tokens seq = prefix;
          seq.push_back(v);
          const double s = lp + std::log(prob[static_cast<std::size_t>(v)]);
          if (v == Vocabulary::kEos) {
            const double norm = s / static_cast<double>(seq.size());
            if (norm > best) {
              best = norm;
              best_seq = prefix;
            }
          } else {
            next.emplace_back(seq, s);
          }
        }
      }
      frontier = std::move(next);
    }
    if (generate(lm, prompt, dc) == best_seq) ++agree;
  }
  EXPECT_EQ(agree, 100);
}

TEST(Lm, PretrainMemorisesOneSentence) {
  const LmConfig c = small();
  const auto g = data::Grammar::make(data::GrammarConfig{}, 1);
  const auto ex = data::render_instruction(g, Task::Reverse, vocab().encode("abc de"));
  const std::vector<LmExample> train(16, ex);
  PretrainConfig pc;
  pc.max_epochs = 60;
  pc.batch_size = 4;
  pc.learning_rate = 1e-2;
  pc.final_learning_rate = 1e-3;
  pc.exec = par::Exec::Serial;
  const auto r = pretrain(c, train, {ex}, pc, 7);
  EXPECT_LT(r.perplexity, 1.05);
  const FrozenLM lm(c, r.params);
  for (const auto& p : lm.params().params()) EXPECT_FALSE(p.trainable());
  EXPECT_NO_THROW(lm.verify());
}

TEST(Lm, FrozenLmRejectsWrongLayout) {
  diff::ParamSet p;
  LmArchitecture(small()).add_params(p, false, 1);
  LmConfig other = small();
  other.layers = 2;
  EXPECT_THROW(FrozenLM(other, p), ShapeError);
}

TEST(Lm, TemplatesAndTasks) {
  for (Task t : kAllTasks) {
    EXPECT_EQ(parse_task(to_string(t)), t);
    const auto& tpl = template_for(t);
    EXPECT_EQ(template_by_id(tpl.id).name, tpl.name);
    const Tokens r = render_prompt(tpl, {5, 6});
    EXPECT_EQ(r.back(), Vocabulary::kSos);
    EXPECT_EQ(r.size(), tpl.prefix.size() + 2 + tpl.postfix.size() + 1);
  }
  EXPECT_THROW(template_by_id(99), UsageError);
  EXPECT_EQ(vocab().decode(vocab().encode("ab [rev]")), "ab [rev]");
}
