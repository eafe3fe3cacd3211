#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "tiny.hpp"
#include "w2p/adam.hpp"
#include "w2p/errors.hpp"
#include "w2p/metrics.hpp"

using namespace w2p;
using sys::System;

namespace {

Matrix random_matrix(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (auto& x : m.reshaped()) x = n(rng);
  return m;
}

train::Example example(const data::World& w, lm::Task task = lm::Task::Transcribe) {
  const auto ds = data::build_task_dataset(w, task, data::Split::FewShot);
  return train::SpeechCorpus{&w.speech, ds.records}.at(0);
}

train::LossBreakdown parts(System s, const lm::FrozenLM& lm, const diff::ParamSet& p,
                           const train::Example& ex, const train::TrainConfig& tc) {
  diff::Tape tape;
  diff::Binder model(tape, p);
  diff::Binder lm_bind(tape, lm.params());
  return train::objective(s, tape, model, lm_bind, lm, tiny::model(), ex, tc).parts;
}

}  // namespace

TEST(Metrics, EditDistanceAndSummary) {
  EXPECT_EQ(metrics::edit_distance({1, 2, 3}, {1, 2, 3}), 0);
  EXPECT_EQ(metrics::edit_distance({}, {1, 2}), 2);
  EXPECT_EQ(metrics::edit_distance({1, 3}, {1, 2, 3}), 1);
  EXPECT_EQ(metrics::edit_distance({3, 2, 1}, {1, 2, 3}), 2);
  const auto s = metrics::summarize({{1, 2}, {1, 3, 4}}, {{1, 2}, {1, 2}});
  EXPECT_EQ(s.count, 2u);
  EXPECT_DOUBLE_EQ(s.exact_match, 50.0);
  EXPECT_DOUBLE_EQ(s.token_accuracy, 100.0 * (1.0 - 2.0 / 4.0));
  EXPECT_DOUBLE_EQ(s.edit_rate, (0.0 + 1.0) / 2.0);
  EXPECT_THROW(metrics::summarize({}, {}), DegenerateInputError);
}

TEST(Losses, MeanSquaredError) {
  EXPECT_DOUBLE_EQ(train::mse_loss(Matrix::Ones(2, 3), Matrix::Ones(2, 3)), 0.0);
  EXPECT_DOUBLE_EQ(train::mse_loss(Matrix::Ones(1, 2), Matrix::Zero(1, 2)), 1.0);
  const Matrix s = random_matrix(3, 4, 1), p = random_matrix(3, 4, 2);
  double ref = 0.0;
  for (int i = 0; i < 3; ++i) {
    double row = 0.0;
    for (int j = 0; j < 4; ++j) row += (s(i, j) - p(i, j)) * (s(i, j) - p(i, j));
    ref += row / 4.0;
  }
  EXPECT_NEAR(train::mse_loss(s, p), ref, 1e-14);
  diff::Tape tape;
  EXPECT_NEAR(tape.scalar(train::mse_loss(tape, tape.constant(s), tape.constant(p))), ref, 1e-14);
  EXPECT_THROW(train::mse_loss(s, random_matrix(2, 4, 3)), ShapeError);
}

TEST(Losses, CrossEntropy) {
  diff::Tape tape;
  EXPECT_NEAR(tape.scalar(train::ce_loss(tape, tape.constant(Matrix::Zero(3, 40)), 1, {4, 5})),
              std::log(40.0), 1e-12);
  Matrix sharp = Matrix::Constant(2, 40, -50.0);
  sharp(0, 7) = 50.0;
  sharp(1, 9) = 50.0;
  EXPECT_LT(tape.scalar(train::ce_loss(tape, tape.constant(sharp), 0, {7, 9})), 1e-30);

  const Matrix z = random_matrix(4, 6, 4);
  const lm::Tokens t = {2, 5, 0};
  double ref = 0.0;
  for (int i = 0; i < 3; ++i) {
    std::vector<double> row(z.row(i + 1).begin(), z.row(i + 1).end());
    ref -= std::log(oracle::softmax(row)[static_cast<std::size_t>(t[static_cast<std::size_t>(i)])]);
  }
  EXPECT_NEAR(tape.scalar(train::ce_loss(tape, tape.constant(z), 1, t)), ref / 3.0, 1e-12);
  EXPECT_THROW(train::ce_loss(tape, tape.constant(z), 2, t), ShapeError);
}

TEST(Objectives, BreakdownArithmetic) {
  const auto w = data::World::build(tiny::world_config());
  const auto lm = tiny::random_lm();
  const auto p = sys::make_params(System::Wav2Prompt, tiny::model(), lm.config(), 3);
  const auto ex = example(w);
  auto tc = tiny::quick();
  const auto b = parts(System::Wav2Prompt, lm, p, ex, tc);
  EXPECT_DOUBLE_EQ(b.total, b.ce + 20.0 * b.mse + 0.05 * b.qua);
  EXPECT_GT(b.mse, 0.0);

  tc.gamma = 0.0;
  const auto g0 = parts(System::Wav2Prompt, lm, p, ex, tc);
  EXPECT_DOUBLE_EQ(g0.ce, b.ce);
  EXPECT_NEAR(b.total - g0.total, 20.0 * b.mse, 1e-12);
  tc.mu = 0.0;
  EXPECT_DOUBLE_EQ(parts(System::Wav2Prompt, lm, p, ex, tc).total, b.ce);

  train::TrainConfig few = tiny::quick();
  few.regime = train::Regime::FewShot;
  few.mu = 0.0;
  const auto f = parts(System::Wav2Prompt, lm, p, example(w, lm::Task::Reverse), few);
  EXPECT_DOUBLE_EQ(f.total, f.ce);
  EXPECT_DOUBLE_EQ(f.mse, 0.0);

  // 1 + 20 * 0.1 + 0.05 * 0.2
  EXPECT_NEAR(1.0 + 20.0 * 0.1 + 0.05 * 0.2, 3.01, 1e-15);
}

TEST(Objectives, CascadeAndEncoderLlm) {
  const auto w = data::World::build(tiny::world_config());
  const auto lm = tiny::random_lm();
  const auto ex = example(w);
  const auto tc = tiny::quick();
  const auto el = parts(System::EncoderLlm, lm, sys::make_params(System::EncoderLlm, tiny::model(), lm.config(), 1), ex, tc);
  EXPECT_DOUBLE_EQ(el.total, el.ce);
  EXPECT_EQ(el.mse, 0.0);
  const auto ctc = parts(System::Cascade, lm, sys::make_params(System::Cascade, tiny::model(), lm.config(), 1), ex, tc);
  EXPECT_GT(ctc.total, 0.0);

  // The cascade never reaches the LM: no LM parameter is even bound.
  const auto p = sys::make_params(System::Cascade, tiny::model(), lm.config(), 1);
  diff::Tape tape;
  diff::Binder model(tape, p);
  diff::Binder lm_bind(tape, lm.params());
  tape.backward(train::objective(System::Cascade, tape, model, lm_bind, lm, tiny::model(), ex, tc).loss);
  const auto lm_grads = lm_bind.gradients();
  for (std::size_t i = 0; i < lm.params().size(); ++i) EXPECT_FALSE(lm_grads.has(static_cast<diff::ParamId>(i)));
  EXPECT_THROW(parts(System::Oracle, lm, {}, ex, tc), UsageError);
}

TEST(Adam, FirstStepMatchesHandComputation) {
  diff::ParamSet p;
  Matrix w(1, 2);
  w << 1.0, -1.0;
  p.add("w", w, true);
  diff::Adam opt(p, diff::AdamConfig{0.1});
  diff::Gradients g = diff::Gradients::zeros_like(p);
  g.grads[0] << 0.5, -2.0;
  EXPECT_DOUBLE_EQ(opt.step(p, g), std::sqrt(0.25 + 4.0));
  // bias-corrected first step moves each entry by lr * g / (|g| + eps)
  EXPECT_NEAR(p[0].value()(0, 0), 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p[0].value()(0, 1), -1.0 + 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
}

TEST(Adam, ClipsToGlobalNorm) {
  diff::ParamSet p;
  p.add("w", Matrix::Zero(1, 2), true);
  diff::Adam opt(p, diff::AdamConfig{1e-3, 0.9, 0.999, 1e-8, 5.0});
  diff::Gradients g = diff::Gradients::zeros_like(p);
  g.grads[0] << 30.0, 40.0;
  EXPECT_DOUBLE_EQ(opt.step(p, g), 50.0);
  EXPECT_NEAR(opt.first_moments()[0](0, 0), 0.1 * 3.0, 1e-12);
  EXPECT_NEAR(opt.first_moments()[0](0, 1), 0.1 * 4.0, 1e-12);
}

TEST(Training, ZeroEpochsReturnsInit) {
  const auto w = data::World::build(tiny::world_config());
  const auto lm = tiny::random_lm();
  const auto init = sys::make_params(System::Wav2Prompt, tiny::model(), lm.config(), 5);
  auto tc = tiny::quick();
  tc.epochs = 0;
  const auto r = train::run_training(System::Wav2Prompt, tiny::model(), lm, init,
                                     tiny::corpus(w, lm::Task::Transcribe, data::Split::AsrTrain), {}, tc);
  EXPECT_TRUE(r.params == init);
  EXPECT_TRUE(r.history.empty());
}

TEST(Training, SameSeedSameHistory) {
  const auto w = data::World::build(tiny::world_config());
  const auto lm = tiny::random_lm();
  const auto init = sys::make_params(System::Wav2Prompt, tiny::model(), lm.config(), 5);
  const auto tr = tiny::corpus(w, lm::Task::Transcribe, data::Split::AsrTrain);
  const auto val = tiny::corpus(w, lm::Task::Transcribe, data::Split::FewShot);
  const auto a = train::run_training(System::Wav2Prompt, tiny::model(), lm, init, tr, val, tiny::quick());
  const auto b = train::run_training(System::Wav2Prompt, tiny::model(), lm, init, tr, val, tiny::quick());
  ASSERT_EQ(a.history.size(), 2u);
  ASSERT_EQ(b.history.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(a.history[i].loss.total, b.history[i].loss.total);
    EXPECT_EQ(a.history[i].grad_norm, b.history[i].grad_norm);
    EXPECT_EQ(a.history[i].val_token_accuracy, b.history[i].val_token_accuracy);
  }
  EXPECT_TRUE(a.params == b.params);
  EXPECT_FALSE(a.params == init);
  EXPECT_EQ(a.lm_checksum, lm.checksum());
}

TEST(Training, MaxStepsStopsEarly) {
  const auto w = data::World::build(tiny::world_config());
  const auto lm = tiny::random_lm();
  auto tc = tiny::quick();
  tc.epochs = 10;
  tc.max_steps = 3;
  const auto r = train::run_training(System::Cascade, tiny::model(), lm,
                                     sys::make_params(System::Cascade, tiny::model(), lm.config(), 1),
                                     tiny::corpus(w, lm::Task::Transcribe, data::Split::AsrTrain), {}, tc);
  EXPECT_EQ(r.steps, 3);
  EXPECT_EQ(r.history.back().steps, 3);
  EXPECT_EQ(r.history.size(), 1u);
}

TEST(Training, RejectsOracleAndNegativeWeights) {
  const auto w = data::World::build(tiny::world_config());
  const auto lm = tiny::random_lm();
  const auto tr = tiny::corpus(w, lm::Task::Transcribe, data::Split::AsrTrain);
  EXPECT_THROW(train::run_training(System::Oracle, tiny::model(), lm, {}, tr, {}, tiny::quick()), UsageError);
  auto tc = tiny::quick();
  tc.gamma = -1.0;
  EXPECT_THROW(train::run_training(System::Wav2Prompt, tiny::model(), lm,
                                   sys::make_params(System::Wav2Prompt, tiny::model(), lm.config(), 1), tr, {}, tc),
               UsageError);
}

TEST(Training, LossDescendsOnSmallOverfitSet) {
  const auto w = data::World::build(tiny::world_config());
  const auto lm = tiny::random_lm();
  auto tr = tiny::corpus(w, lm::Task::Transcribe, data::Split::AsrTrain);
  tr.records.resize(16);
  auto tc = tiny::quick();
  tc.epochs = 8;
  tc.batch_size = 16;
  tc.learning_rate = 3e-3;
  tc.final_learning_rate = 3e-3;
  const auto r = train::run_training(System::Wav2Prompt, tiny::model(), lm,
                                     sys::make_params(System::Wav2Prompt, tiny::model(), lm.config(), 6), tr, {}, tc);
  ASSERT_EQ(r.history.size(), 8u);
  for (std::size_t i = 1; i < r.history.size(); ++i)
    EXPECT_LE(r.history[i].loss.total, r.history[i - 1].loss.total) << "epoch " << i;
}
