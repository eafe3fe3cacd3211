#pragma once

#include <cstdint>
#include <string>

#include "w2p/matrix.hpp"
#include "w2p/params.hpp"
#include "w2p/tape.hpp"

namespace w2p::enc {

struct EncoderConfig {
  int d_in = 16;
  int front_channels = 32;
  int d_model = 24;  // content width; frames carry one extra firing column
  int layers = 2;
  int kernel = 5;  // mixing-layer temporal kernel, odd
  int d_ff = 64;
  double firing_bias = -1.0;
};

bool operator==(const EncoderConfig& a, const EncoderConfig& b);

// Shortest input the front-end accepts; shorter inputs are zero-padded.
inline constexpr int kMinInputFrames = 4;

// Frames after the two stride-2 front-end convolutions.
inline int output_length(int input_frames) {
  const int t = input_frames < kMinInputFrames ? kMinInputFrames : input_frames;
  return (t + 3) / 4;
}

// Two stride-2 kernel-3 convolutions with ReLU, then `layers` residual
// blocks of a gated temporal convolution and a pointwise MLP, each behind a
// layer norm, then a linear map to d_model + 1 columns. The last column is
// the firing logit.
class Encoder {
 public:
  explicit Encoder(EncoderConfig cfg, std::string prefix = "enc.")
      : cfg_(cfg), prefix_(std::move(prefix)) {}

  const EncoderConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }
  int out_dim() const { return cfg_.d_model + 1; }

  void add_params(diff::ParamSet& params, std::uint64_t seed) const;

  // T0 x d_in features -> ceil(T0/4) x (d_model + 1) frames.
  diff::Var encode(diff::Tape& tape, diff::Binder& bind, diff::Var features) const;
  Matrix encode(const diff::ParamSet& params, const Matrix& features) const;

 private:
  std::string name(const std::string& s) const { return prefix_ + s; }

  EncoderConfig cfg_;
  std::string prefix_;
};

// Row j is frames jk..jk+k-1 side by side; the last group is zero-padded.
diff::Var stack_frames(diff::Tape& tape, diff::Var frames, int k = 8);
Matrix stack_frames(const Matrix& frames, int k = 8);
// Inverse of stack_frames on the first `length` frames.
Matrix unstack_frames(const Matrix& stacked, int k, int length);

}  // namespace w2p::enc
