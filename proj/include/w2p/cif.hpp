#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "w2p/matrix.hpp"
#include "w2p/params.hpp"
#include "w2p/tape.hpp"

// Continuous integrate-and-fire: per-frame firing weights are accumulated
// left to right and every time the running sum reaches the threshold the
// weighted frames so far are emitted as one label-level vector.
namespace w2p::cif {

enum class WeightMode { Raw, Scaled };

// What to do with a partial accumulation left after the last frame.
enum class TailPolicy { AlwaysFire, Drop, FireIfHalf };

TailPolicy parse_tail_policy(const std::string& s);
std::string to_string(TailPolicy p);

// Residual mass below this is treated as zero. Absorbs drift from scaling.
constexpr double kFireEpsilon = 1e-9;

struct FiringWeights {
  ColVector alphas;
  WeightMode mode = WeightMode::Raw;
  std::optional<int> target_length;  // set iff mode == Scaled

  double total() const { return alphas.sum(); }
  Eigen::Index size() const { return alphas.size(); }
};

// One piece of a frame's weight assigned to an event. A frame straddling the
// threshold contributes to two (or more) consecutive events.
struct Contribution {
  int frame = 0;
  double weight = 0.0;
  bool starts_mid_frame = false;  // earlier pieces of this frame went to a previous event
  bool ends_mid_frame = false;    // later pieces of this frame go to the next event
};

struct FireEvent {
  int index = 0;
  std::vector<Contribution> parts;
  // (alpha_t1, alpha_t2) for the frame that crossed the threshold: the piece
  // that closed this event and what was left of the frame afterwards.
  std::optional<std::pair<double, double>> split;
  bool complete = true;  // false for a tail event fired below the threshold

  double mass() const;
  int first_frame() const { return parts.front().frame; }
  int last_frame() const { return parts.back().frame; }
};

struct FireResult {
  std::vector<FireEvent> events;
  double residual = 0.0;  // mass accumulated after the last emitted event
};

// alpha_t = sigmoid(E[t, d-1]). Requires at least two columns.
FiringWeights firing_weights(const Matrix& frames);

// alpha_hat = alpha * M / sum(alpha). Throws DegenerateInputError when the
// weights sum to zero.
FiringWeights scale_weights(const FiringWeights& w, int target_length);

// Event structure only.
FireResult integrate(const ColVector& alphas, double threshold = 1.0,
                     TailPolicy tail = TailPolicy::FireIfHalf);

struct PooledResult {
  FireResult fire;
  Matrix pooled;  // events x content dims
};

// Events plus the contribution-weighted sum of content rows per event.
PooledResult integrate_and_fire(const Matrix& content, const FiringWeights& w,
                                double threshold = 1.0,
                                TailPolicy tail = TailPolicy::FireIfHalf);

// S = pooled * W + b.
Matrix project(const Matrix& pooled, const Matrix& weight, const RowVector& bias);

// |sum(alpha) - M|.
double quantity_loss(const FiringWeights& w, int target_length);

// One JSON record per line: index, frames, weights, split, mass, complete.
void dump_events(std::ostream& os, const std::vector<FireEvent>& events);

// --- Differentiable path ---------------------------------------------------

// events x T contribution matrix as a function of the weights that produced
// `events`. The event structure is held fixed; gradients flow through the
// piece weights.
diff::Var contribution_matrix(diff::Tape& tape, diff::Var alphas,
                              const std::vector<FireEvent>& events);

// alphas * M / sum(alphas) on the tape.
diff::Var scale_to_length(diff::Tape& tape, diff::Var alphas, int target_length);

diff::Var quantity_loss(diff::Tape& tape, diff::Var raw_alphas, int target_length);

struct CifOutput {
  diff::Var raw_alphas;   // T x 1
  diff::Var used_alphas;  // raw or scaled
  diff::Var pooled;       // events x (d-1)
  FireResult fire;
};

// Runs the full CIF on encoder frames (T x d, last column firing logits).
// With a target length the weights are scaled to it, otherwise raw.
CifOutput cif_forward(diff::Tape& tape, diff::Var frames, std::optional<int> target_length,
                      double threshold = 1.0, TailPolicy tail = TailPolicy::FireIfHalf);

}  // namespace w2p::cif
