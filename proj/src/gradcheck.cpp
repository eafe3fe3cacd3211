#include "w2p/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "w2p/errors.hpp"

namespace w2p::diff {

namespace {

double evaluate(const LossFn& loss, const ParamSet& params) {
  Tape tape;
  Binder binder(tape, params);
  const double v = tape.scalar(loss(tape, binder));
  if (!std::isfinite(v)) throw NonFiniteError("finite_diff_check: perturbed loss is not finite");
  return v;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelErrorFloor});
  return std::abs(analytic - numeric) / denom;
}

double GradReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& p : params) m = std::max(m, p.max_rel_error);
  return m;
}

std::size_t GradReport::checked() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.checked;
  return n;
}

Gradients analytic_gradients(const LossFn& loss, const ParamSet& params) {
  Tape tape;
  Binder binder(tape, params);
  tape.backward(loss(tape, binder));
  return binder.gradients();
}

GradReport finite_diff_check(const LossFn& loss, ParamSet& params, double step,
                             std::size_t max_scalars, std::uint64_t seed) {
  const Gradients analytic = analytic_gradients(loss, params);

  // (param, flat index) for every trainable scalar.
  std::vector<std::pair<ParamId, Eigen::Index>> slots;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Param& p = params[static_cast<ParamId>(i)];
    if (!p.trainable()) continue;
    for (Eigen::Index k = 0; k < p.value().size(); ++k)
      slots.emplace_back(static_cast<ParamId>(i), k);
  }
  if (max_scalars > 0 && slots.size() > max_scalars) {
    std::mt19937_64 rng(seed);
    std::shuffle(slots.begin(), slots.end(), rng);
    slots.resize(max_scalars);
    std::sort(slots.begin(), slots.end());
  }

  GradReport report;
  std::vector<int> report_index(params.size(), -1);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Param& p = params[static_cast<ParamId>(i)];
    if (!p.trainable()) continue;
    report_index[i] = static_cast<int>(report.params.size());
    report.params.push_back(ParamCheck{p.name()});
  }

  std::vector<double> an_sq(params.size(), 0.0), nu_sq(params.size(), 0.0);
  for (const auto& [pid, k] : slots) {
    double& w = params[pid].value().data()[k];
    const double saved = w;
    w = saved + step;
    const double up = evaluate(loss, params);
    w = saved - step;
    const double down = evaluate(loss, params);
    w = saved;

    const double numeric = (up - down) / (2.0 * step);
    const Matrix& g = analytic.grads[static_cast<std::size_t>(pid)];
    const double a = g.size() ? g.data()[k] : 0.0;
    ParamCheck& pc = report.params[static_cast<std::size_t>(report_index[pid])];
    pc.checked += 1;
    pc.max_rel_error = std::max(pc.max_rel_error, relative_error(a, numeric));
    pc.max_abs_error = std::max(pc.max_abs_error, std::abs(a - numeric));
    an_sq[pid] += a * a;
    nu_sq[pid] += numeric * numeric;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (report_index[i] < 0) continue;
    ParamCheck& pc = report.params[static_cast<std::size_t>(report_index[i])];
    pc.analytic_norm = std::sqrt(an_sq[i]);
    pc.numeric_norm = std::sqrt(nu_sq[i]);
  }
  return report;
}

}  // namespace w2p::diff
