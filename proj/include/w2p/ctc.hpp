#pragma once

#include <vector>

#include "w2p/matrix.hpp"
#include "w2p/tape.hpp"

namespace w2p::ctc {

// Negative log-probability of `target` summed over every blank-augmented
// monotonic alignment. `log_probs` is T x (V+1) with row-normalized log
// probabilities; the blank is the last column. Throws
// InfeasibleAlignmentError when T is shorter than the shortest alignment.
double loss(const Matrix& log_probs, const std::vector<int>& target);

// Gradient of loss() with respect to log_probs.
Matrix loss_grad(const Matrix& log_probs, const std::vector<int>& target);

// Differentiable wrapper around loss().
diff::Var loss(diff::Tape& tape, diff::Var log_probs, const std::vector<int>& target);

// Per-frame argmax (lowest id wins ties), collapse repeats, drop blanks.
std::vector<int> greedy_decode(const Matrix& log_probs);

// Frames needed to emit `target`: its length plus one per repeated pair.
int min_frames(const std::vector<int>& target);

}  // namespace w2p::ctc
