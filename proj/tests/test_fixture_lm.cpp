// Checks on the pretrained fixture LM cached by the acceptance harness.

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "acceptance_setup.hpp"
#include "oracles.hpp"
#include "w2p/experiment.hpp"

using namespace w2p;
using lm::Tokens;
using lm::Vocabulary;

namespace {

const exp::Fixture& fixture() {
  static const exp::Fixture fx = exp::load_fixture(acceptance::config(acceptance::default_dir()));
  return fx;
}

// Best length-normalised answer of at most four tokens, [eos] included,
// by depth-first search. A prefix is abandoned once even a free finish at
// the longest length could not beat the best answer found so far.
struct Exhaustive {
  const lm::FrozenLM& lm;
  Matrix prompt;  // template rows, ending with [sos]
  double penalty;
  double best = -1e300;
  Tokens best_seq;

  void search(const Tokens& prefix, double lp) {
    if (prefix.size() == 4 || lp / 4.0 < best) return;
    Matrix rows(prompt.rows() + static_cast<Eigen::Index>(prefix.size()), prompt.cols());
    rows.topRows(prompt.rows()) = prompt;
    for (std::size_t i = 0; i < prefix.size(); ++i)
      rows.row(prompt.rows() + static_cast<Eigen::Index>(i)) = lm.embedding_table().row(prefix[i]);
    RowVector last = lm.lm_forward(lm::EmbeddedSequence{rows, {}}).bottomRows(1);
    lm::apply_repetition_penalty(last, prefix, penalty);
    std::vector<double> z(last.data(), last.data() + last.size());
    const auto p = oracle::softmax(z);
    std::vector<int> order(p.size());
    for (std::size_t v = 0; v < p.size(); ++v) order[v] = static_cast<int>(v);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p[static_cast<std::size_t>(a)] > p[static_cast<std::size_t>(b)]; });
    for (int v : order) {
      const double s = lp + std::log(p[static_cast<std::size_t>(v)]);
      if (v == Vocabulary::kEos) {
        const double norm = s / static_cast<double>(prefix.size() + 1);
        if (norm > best) {
          best = norm;
          best_seq = prefix;
        }
      } else if (prefix.size() < 3) {
        Tokens next = prefix;
        next.push_back(v);
        search(next, s);
      }
    }
  }
};

}  // namespace

TEST(FixtureLm, OracleTranscribesHeldOutText) {
  const auto& fx = fixture();
  const auto c = acceptance::config(acceptance::default_dir());
  std::size_t right = 0;
  const std::size_t n = std::min<std::size_t>(200, fx.world.test.size());
  for (std::size_t i = 0; i < n; ++i)
    right += sys::oracle_infer(fx.lm, fx.world.test[i], lm::Task::Transcribe, c.decode) == fx.world.test[i];
  EXPECT_GE(100.0 * static_cast<double>(right) / static_cast<double>(n), 99.0);
}

TEST(FixtureLm, BeamFindsExhaustiveArgmax) {
  // Held-out sentences under the intent template: the only task whose
  // answers fit in four tokens.
  const auto& fx = fixture();
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> pick(0, fx.world.test.size() - 1);
  lm::DecodeConfig dc;  // beam 5, penalty 1.5
  dc.max_length = 4;
  int agree = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Tokens& text = fx.world.test[pick(rng)];
    const auto prompt = fx.lm.embed(lm::render_prompt(lm::template_for(lm::Task::Intent), text));
    Exhaustive ex{fx.lm, prompt.rows, dc.repetition_penalty, -1e300, {}};
    ex.search({}, 0.0);
    // generate appends [sos] itself
    lm::EmbeddedSequence head{prompt.rows.topRows(prompt.rows.rows() - 1), {}};
    if (lm::generate(fx.lm, head, dc) == ex.best_seq) ++agree;
  }
  EXPECT_GE(agree, 95);
}
