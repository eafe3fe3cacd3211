#include <gtest/gtest.h>

#include <random>

#include "w2p/encoder.hpp"
#include "w2p/gradcheck.hpp"
#include "w2p/systems.hpp"

using namespace w2p;
using enc::Encoder;
using enc::EncoderConfig;

namespace {

Matrix random_matrix(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (auto& x : m.reshaped()) x = n(rng);
  return m;
}

EncoderConfig tiny() {
  EncoderConfig c;
  c.d_in = 4;
  c.front_channels = 5;
  c.d_model = 6;
  c.layers = 1;
  c.kernel = 3;
  c.d_ff = 7;
  return c;
}

}  // namespace

TEST(Encoder, StrideArithmetic) {
  EXPECT_EQ(enc::output_length(16), 4);
  EXPECT_EQ(enc::output_length(17), 5);
  EXPECT_EQ(enc::output_length(1), 1);
  Encoder e(tiny());
  diff::ParamSet p;
  e.add_params(p, 1);
  for (int t0 : {1, 3, 16, 17, 41}) {
    const Matrix out = e.encode(p, random_matrix(t0, 4, 2));
    EXPECT_EQ(out.rows(), enc::output_length(t0));
    EXPECT_EQ(out.cols(), e.out_dim());
  }
}

TEST(Encoder, ZeroInputZeroParams) {
  EncoderConfig c = tiny();
  c.firing_bias = -0.7;
  Encoder e(c);
  diff::ParamSet p;
  e.add_params(p, 1);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& v = p[static_cast<diff::ParamId>(i)].value();
    if (p[static_cast<diff::ParamId>(i)].name() == "enc.out.b")
      v.leftCols(v.cols() - 1).setZero();
    else
      v.setZero();
  }
  const Matrix out = e.encode(p, Matrix::Zero(16, 4));
  EXPECT_TRUE(out.leftCols(c.d_model).isZero(0.0));
  for (int t = 0; t < out.rows(); ++t) EXPECT_DOUBLE_EQ(out(t, c.d_model), -0.7);
}

TEST(Encoder, TapeAndMatrixPathsAgree) {
  Encoder e(tiny());
  diff::ParamSet p;
  e.add_params(p, 3);
  const Matrix x = random_matrix(23, 4, 4);
  diff::Tape tape;
  diff::Binder bind(tape, p);
  EXPECT_EQ(tape.value(e.encode(tape, bind, tape.constant(x))), e.encode(p, x));
}

TEST(Encoder, GradientOfMeanOutput) {
  Encoder e(tiny());
  diff::ParamSet p;
  e.add_params(p, 5);
  const Matrix x = random_matrix(19, 4, 6);
  diff::LossFn loss = [&](diff::Tape& tape, diff::Binder& bind) {
    diff::Var out = e.encode(tape, bind, tape.constant(x));
    return tape.scale(tape.sum(out), 1.0 / static_cast<double>(tape.value(out).size()));
  };
  EXPECT_LT(diff::finite_diff_check(loss, p).max_rel_error(), 1e-4);
}

TEST(Encoder, StackFrames) {
  const Matrix f16 = random_matrix(16, 3, 7);
  const Matrix s16 = enc::stack_frames(f16, 8);
  EXPECT_EQ(s16.rows(), 2);
  EXPECT_EQ(s16.cols(), 24);
  EXPECT_EQ(enc::stack_frames(f16, 1), f16);

  const Matrix f13 = random_matrix(13, 3, 8);
  const Matrix s13 = enc::stack_frames(f13, 8);
  ASSERT_EQ(s13.rows(), 2);
  ASSERT_EQ(s13.cols(), 24);
  for (int j = 0; j < 2; ++j)
    for (int o = 0; o < 8; ++o) {
      const int t = 8 * j + o;
      for (int c = 0; c < 3; ++c) EXPECT_EQ(s13(j, 3 * o + c), t < 13 ? f13(t, c) : 0.0);
    }
  EXPECT_TRUE(s13.row(1).rightCols(9).isZero(0.0));
  EXPECT_EQ(enc::unstack_frames(s13, 8, 13), f13);

  diff::Tape tape;
  EXPECT_EQ(tape.value(enc::stack_frames(tape, tape.constant(f13), 8)), s13);
}

TEST(Systems, ParameterShapes) {
  sys::ModelConfig mc;
  mc.encoder = tiny();
  lm::LmConfig lc;
  lc.d_model = 8;
  const auto w2p = sys::make_params(sys::System::Wav2Prompt, mc, lc, 1);
  EXPECT_EQ(w2p[w2p.id("proj.w")].value().rows(), 6);
  EXPECT_EQ(w2p[w2p.id("proj.w")].value().cols(), 8);
  const auto el = sys::make_params(sys::System::EncoderLlm, mc, lc, 1);
  EXPECT_EQ(el[el.id("stack.w")].value().rows(), 8 * 6);
  const auto ctc = sys::make_params(sys::System::Cascade, mc, lc, 1);
  EXPECT_EQ(ctc[ctc.id("ctc.w")].value().cols(), lc.vocab_size + 1);
  EXPECT_EQ(sys::make_params(sys::System::Oracle, mc, lc, 1).size(), 0u);
  for (const auto& p : w2p.params()) EXPECT_TRUE(p.trainable()) << p.name();
}

TEST(Systems, CopyEncoderGivesEqualEncoders) {
  sys::ModelConfig mc;
  mc.encoder = tiny();
  lm::LmConfig lc;
  const auto ctc = sys::make_params(sys::System::Cascade, mc, lc, 1);
  auto el = sys::make_params(sys::System::EncoderLlm, mc, lc, 2);
  sys::copy_encoder(el, ctc);
  for (const auto& p : el.params())
    if (p.name().rfind("enc.", 0) == 0) {
      EXPECT_EQ(p.value(), ctc[ctc.id(p.name())].value());
    }
}

TEST(Systems, EncoderLlmPayloadLength) {
  sys::ModelConfig mc;
  mc.encoder = tiny();
  lm::LmConfig lc;
  lc.d_model = 8;
  const auto p = sys::make_params(sys::System::EncoderLlm, mc, lc, 1);
  diff::Tape tape;
  diff::Binder bind(tape, p);
  // 64 raw frames -> T = 16 encoder frames -> 2 stacked rows
  auto sp = sys::speech_prompt(sys::System::EncoderLlm, mc, tape, bind,
                               tape.constant(random_matrix(64, 4, 9)), std::nullopt);
  EXPECT_EQ(tape.rows(sp.payload), 2);
  EXPECT_EQ(tape.cols(sp.payload), 8);
}

TEST(Systems, Wav2PromptScaledPayloadHasTargetLength) {
  sys::ModelConfig mc;
  mc.encoder = tiny();
  lm::LmConfig lc;
  lc.d_model = 8;
  const auto p = sys::make_params(sys::System::Wav2Prompt, mc, lc, 1);
  for (int m : {1, 3, 9}) {
    diff::Tape tape;
    diff::Binder bind(tape, p);
    auto sp = sys::speech_prompt(sys::System::Wav2Prompt, mc, tape, bind,
                                 tape.constant(random_matrix(40, 4, 10)), m);
    EXPECT_EQ(tape.rows(sp.payload), m);
    ASSERT_TRUE(sp.cif.has_value());
  }
}

TEST(Systems, Names) {
  for (auto s : {sys::System::Wav2Prompt, sys::System::EncoderLlm, sys::System::FlatStartEncoderLlm,
                 sys::System::Cascade, sys::System::Oracle})
    EXPECT_EQ(sys::parse_system(sys::to_string(s)), s);
  EXPECT_ANY_THROW(sys::parse_system("whisper"));
}
