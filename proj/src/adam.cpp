#include "w2p/adam.hpp"

#include <cmath>

#include "w2p/errors.hpp"

namespace w2p::diff {

Adam::Adam(const ParamSet& params, AdamConfig cfg) : cfg_(cfg) {
  m_.resize(params.size());
  v_.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Param& p = params[static_cast<ParamId>(i)];
    if (!p.trainable()) continue;
    m_[i] = Matrix::Zero(p.value().rows(), p.value().cols());
    v_[i] = Matrix::Zero(p.value().rows(), p.value().cols());
  }
}

double Adam::step(ParamSet& params, Gradients grads) {
  if (grads.grads.size() != params.size()) throw ShapeError("Adam::step: gradient size mismatch");
  const double norm = grads.norm();
  if (!std::isfinite(norm)) throw NonFiniteError("Adam::step: gradient is not finite");
  if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) grads.scale(cfg_.clip_norm / norm);

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = params[static_cast<ParamId>(i)];
    if (!p.trainable() || grads.grads[i].size() == 0) continue;
    const Matrix& g = grads.grads[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    p.value().array() -= cfg_.learning_rate * (m_[i].array() / bc1) /
                         ((v_[i].array() / bc2).sqrt() + cfg_.epsilon);
  }
  return norm;
}

void Adam::restore(std::int64_t steps, std::vector<Matrix> m, std::vector<Matrix> v) {
  if (m.size() != m_.size() || v.size() != v_.size())
    throw ShapeError("Adam::restore: moment count mismatch");
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace w2p::diff
