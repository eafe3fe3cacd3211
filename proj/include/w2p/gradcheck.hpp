#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "w2p/params.hpp"
#include "w2p/tape.hpp"

namespace w2p::diff {

// Records a forward pass for the parameters bound through the Binder and
// returns the scalar loss. Must be deterministic.
using LossFn = std::function<Var(Tape&, Binder&)>;

struct ParamCheck {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
};

struct GradReport {
  std::vector<ParamCheck> params;  // trainable parameters only
  double max_rel_error() const;
  std::size_t checked() const;
  bool passed(double tol) const { return max_rel_error() < tol; }
};

constexpr double kRelErrorFloor = 1e-8;

double relative_error(double analytic, double numeric);

// Gradient of `loss` with respect to the trainable entries of `params`.
Gradients analytic_gradients(const LossFn& loss, const ParamSet& params);

// Central differences against the analytic gradient. Checks every trainable
// scalar, or a seeded random subsample of `max_scalars` when the model is
// larger than that (0 = no limit). `params` is perturbed in place and
// restored. Throws NonFiniteError if a perturbed loss is not finite.
GradReport finite_diff_check(const LossFn& loss, ParamSet& params, double step = 1e-5,
                             std::size_t max_scalars = 0, std::uint64_t seed = 0);

}  // namespace w2p::diff
