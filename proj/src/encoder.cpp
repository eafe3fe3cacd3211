#include "w2p/encoder.hpp"

#include <random>
#include <vector>

#include "w2p/errors.hpp"

namespace w2p::enc {

using diff::Binder;
using diff::Tape;
using diff::Var;

bool operator==(const EncoderConfig& a, const EncoderConfig& b) {
  return a.d_in == b.d_in && a.front_channels == b.front_channels && a.d_model == b.d_model &&
         a.layers == b.layers && a.kernel == b.kernel && a.d_ff == b.d_ff &&
         a.firing_bias == b.firing_bias;
}

namespace {

// Temporal convolution as gathered row windows times one weight matrix.
// Output row j sees input rows stride*j + o for o in [-k/2, k/2].
Var conv(Tape& tape, Var x, Var w, Var b, int kernel, int stride) {
  const int t = static_cast<int>(tape.rows(x));
  const int out = (t + stride - 1) / stride;
  std::vector<Var> taps;
  std::vector<int> idx(static_cast<std::size_t>(out));
  for (int o = -kernel / 2; o <= kernel / 2; ++o) {
    for (int j = 0; j < out; ++j) {
      const int src = stride * j + o;
      idx[static_cast<std::size_t>(j)] = src >= 0 && src < t ? src : -1;
    }
    taps.push_back(tape.gather_rows(x, idx));
  }
  return tape.add(tape.matmul(tape.concat_cols(taps), w), b);
}

}  // namespace

void Encoder::add_params(diff::ParamSet& params, std::uint64_t seed) const {
  if (cfg_.kernel < 1 || cfg_.kernel % 2 == 0) throw UsageError("encoder kernel must be odd");
  std::mt19937_64 rng(seed);
  auto weight = [&](const std::string& n, int in, int out) {
    params.add_weight(name(n), in, out, true, rng);
  };
  weight("front1.w", 3 * cfg_.d_in, cfg_.front_channels);
  params.add_bias(name("front1.b"), cfg_.front_channels, true);
  weight("front2.w", 3 * cfg_.front_channels, cfg_.d_model);
  params.add_bias(name("front2.b"), cfg_.d_model, true);
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    weight(p + "conv.w", cfg_.kernel * cfg_.d_model, 2 * cfg_.d_model);
    params.add_bias(name(p + "conv.b"), 2 * cfg_.d_model, true);
    weight(p + "ff1.w", cfg_.d_model, cfg_.d_ff);
    params.add_bias(name(p + "ff1.b"), cfg_.d_ff, true);
    weight(p + "ff2.w", cfg_.d_ff, cfg_.d_model);
    params.add_bias(name(p + "ff2.b"), cfg_.d_model, true);
  }
  weight("out.w", cfg_.d_model, cfg_.d_model + 1);
  const auto b = params.add_bias(name("out.b"), cfg_.d_model + 1, true);
  params[b].value()(0, cfg_.d_model) = cfg_.firing_bias;
}

Var Encoder::encode(Tape& tape, Binder& bind, Var features) const {
  if (tape.cols(features) != cfg_.d_in)
    throw ShapeError("encode: expected " + std::to_string(cfg_.d_in) + " feature columns");
  if (tape.rows(features) < 1) throw DegenerateInputError("encode: empty feature sequence");
  Var x = features;
  if (tape.rows(x) < kMinInputFrames) {
    std::vector<int> idx(kMinInputFrames, -1);
    for (int i = 0; i < static_cast<int>(tape.rows(x)); ++i) idx[static_cast<std::size_t>(i)] = i;
    x = tape.gather_rows(x, idx);
  }
  x = tape.relu(conv(tape, x, bind(name("front1.w")), bind(name("front1.b")), 3, 2));
  x = tape.relu(conv(tape, x, bind(name("front2.w")), bind(name("front2.b")), 3, 2));
  const int d = cfg_.d_model;
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    Var h = conv(tape, tape.layer_norm_rows(x), bind(name(p + "conv.w")), bind(name(p + "conv.b")),
                 cfg_.kernel, 1);
    x = tape.add(x, tape.mul(tape.slice_cols(h, 0, d), tape.logistic(tape.slice_cols(h, d, d))));
    Var f = tape.relu(tape.add(tape.matmul(tape.layer_norm_rows(x), bind(name(p + "ff1.w"))),
                               bind(name(p + "ff1.b"))));
    x = tape.add(x, tape.add(tape.matmul(f, bind(name(p + "ff2.w"))), bind(name(p + "ff2.b"))));
  }
  return tape.add(tape.matmul(x, bind(name("out.w"))), bind(name("out.b")));
}

Matrix Encoder::encode(const diff::ParamSet& params, const Matrix& features) const {
  Tape tape;
  Binder bind(tape, params);
  return tape.value(encode(tape, bind, tape.constant(features)));
}

Var stack_frames(Tape& tape, Var frames, int k) {
  if (k < 1) throw UsageError("stack_frames: k must be positive");
  const int t = static_cast<int>(tape.rows(frames));
  const int out = (t + k - 1) / k;
  std::vector<Var> cols;
  std::vector<int> idx(static_cast<std::size_t>(out));
  for (int o = 0; o < k; ++o) {
    for (int j = 0; j < out; ++j) {
      const int src = j * k + o;
      idx[static_cast<std::size_t>(j)] = src < t ? src : -1;
    }
    cols.push_back(tape.gather_rows(frames, idx));
  }
  return tape.concat_cols(cols);
}

Matrix stack_frames(const Matrix& frames, int k) {
  Tape tape;
  return tape.value(stack_frames(tape, tape.constant(frames), k));
}

Matrix unstack_frames(const Matrix& stacked, int k, int length) {
  const Eigen::Index d = stacked.cols() / k;
  if (d * k != stacked.cols() || length > stacked.rows() * k)
    throw ShapeError("unstack_frames: shape does not match k and length");
  Matrix out(length, d);
  for (int t = 0; t < length; ++t) out.row(t) = stacked.block(t / k, (t % k) * d, 1, d);
  return out;
}

}  // namespace w2p::enc
