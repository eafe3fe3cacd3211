#pragma once

#include <cstdint>
#include <vector>

#include "w2p/params.hpp"

namespace w2p::diff {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables clipping
};

// Adaptive-moment optimizer over the trainable entries of one ParamSet.
class Adam {
 public:
  Adam(const ParamSet& params, AdamConfig cfg);

  // Clips `grads` to cfg.clip_norm (global L2) and applies one update.
  // Returns the pre-clip gradient norm.
  double step(ParamSet& params, Gradients grads);

  const AdamConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
  std::int64_t steps() const { return t_; }

  // Moment buffers, exposed for checkpointing.
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }
  void restore(std::int64_t steps, std::vector<Matrix> m, std::vector<Matrix> v);

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace w2p::diff
