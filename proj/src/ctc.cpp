#include "w2p/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "w2p/errors.hpp"

namespace w2p::ctc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

struct Lattice {
  std::vector<int> labels;  // blank-augmented target
  Matrix alpha, beta;       // T x S, log space, emissions included
  double log_prob = kNegInf;
};

Lattice run(const Matrix& lp, const std::vector<int>& target, bool with_beta) {
  const int blank = static_cast<int>(lp.cols()) - 1;
  const int T = static_cast<int>(lp.rows());
  for (int t : target)
    if (t < 0 || t >= blank) throw UsageError("ctc: target id outside the label range");
  if (T < min_frames(target))
    throw InfeasibleAlignmentError("ctc: " + std::to_string(T) + " frames cannot emit " +
                                   std::to_string(target.size()) + " labels");
  Lattice L;
  L.labels.push_back(blank);
  for (int t : target) {
    L.labels.push_back(t);
    L.labels.push_back(blank);
  }
  const int S = static_cast<int>(L.labels.size());
  auto can_skip = [&](int s) { return s >= 2 && L.labels[s] != blank && L.labels[s] != L.labels[s - 2]; };

  L.alpha = Matrix::Constant(T, S, kNegInf);
  L.alpha(0, 0) = lp(0, blank);
  if (S > 1) L.alpha(0, 1) = lp(0, L.labels[1]);
  for (int t = 1; t < T; ++t)
    for (int s = 0; s < S; ++s) {
      double a = L.alpha(t - 1, s);
      if (s >= 1) a = log_add(a, L.alpha(t - 1, s - 1));
      if (can_skip(s)) a = log_add(a, L.alpha(t - 1, s - 2));
      if (a != kNegInf) L.alpha(t, s) = a + lp(t, L.labels[s]);
    }
  L.log_prob = L.alpha(T - 1, S - 1);
  if (S > 1) L.log_prob = log_add(L.log_prob, L.alpha(T - 1, S - 2));

  if (with_beta) {
    L.beta = Matrix::Constant(T, S, kNegInf);
    L.beta(T - 1, S - 1) = lp(T - 1, blank);
    if (S > 1) L.beta(T - 1, S - 2) = lp(T - 1, L.labels[S - 2]);
    for (int t = T - 2; t >= 0; --t)
      for (int s = 0; s < S; ++s) {
        double b = L.beta(t + 1, s);
        if (s + 1 < S) b = log_add(b, L.beta(t + 1, s + 1));
        if (s + 2 < S && can_skip(s + 2)) b = log_add(b, L.beta(t + 1, s + 2));
        if (b != kNegInf) L.beta(t, s) = b + lp(t, L.labels[s]);
      }
  }
  return L;
}

}  // namespace

int min_frames(const std::vector<int>& target) {
  int n = static_cast<int>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return std::max(n, 1);
}

double loss(const Matrix& log_probs, const std::vector<int>& target) {
  if (log_probs.rows() < 1 || log_probs.cols() < 2) throw ShapeError("ctc: empty log-prob matrix");
  return -run(log_probs, target, false).log_prob;
}

Matrix loss_grad(const Matrix& log_probs, const std::vector<int>& target) {
  if (log_probs.rows() < 1 || log_probs.cols() < 2) throw ShapeError("ctc: empty log-prob matrix");
  const Lattice L = run(log_probs, target, true);
  Matrix g = Matrix::Zero(log_probs.rows(), log_probs.cols());
  for (Eigen::Index t = 0; t < log_probs.rows(); ++t)
    for (std::size_t s = 0; s < L.labels.size(); ++s) {
      const auto k = L.labels[s];
      const double ab = L.alpha(t, static_cast<Eigen::Index>(s)) + L.beta(t, static_cast<Eigen::Index>(s));
      if (ab == kNegInf) continue;
      g(t, k) -= std::exp(ab - log_probs(t, k) - L.log_prob);
    }
  return g;
}

diff::Var loss(diff::Tape& tape, diff::Var log_probs, const std::vector<int>& target) {
  const Matrix& lp = tape.value(log_probs);
  Matrix value(1, 1);
  value(0, 0) = loss(lp, target);
  return tape.custom(std::move(value), {log_probs}, [log_probs, target](diff::Tape& t, int self) {
    if (!t.requires_grad(log_probs)) return;
    const double up = t.grad_of_node(self)(0, 0);
    t.grad_accumulator(log_probs) += up * loss_grad(t.value(log_probs), target);
  });
}

std::vector<int> greedy_decode(const Matrix& log_probs) {
  const int blank = static_cast<int>(log_probs.cols()) - 1;
  std::vector<int> out;
  int prev = -1;
  for (Eigen::Index t = 0; t < log_probs.rows(); ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < log_probs.cols(); ++k)
      if (log_probs(t, k) > log_probs(t, best)) best = k;
    const int k = static_cast<int>(best);
    if (k != prev && k != blank) out.push_back(k);
    prev = k;
  }
  return out;
}

}  // namespace w2p::ctc
