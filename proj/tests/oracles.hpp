#pragma once

// Reference computations written without the library, used by the unit
// tests and the acceptance harness.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <utility>
#include <vector>

#include "w2p/matrix.hpp"

namespace w2p::oracle {

// One CIF event as (frame, weight) pieces.
using Pieces = std::vector<std::pair<int, double>>;

struct CifReference {
  std::vector<Pieces> events;
  std::vector<bool> complete;
};

// Event k owns the interval [k*beta, (k+1)*beta) of the cumulative weight
// axis and frame t owns [C(t-1), C(t)). A piece is the overlap of the two.
// Leftover mass after the last full event fires when it reaches half the
// threshold. Pieces lighter than `min_piece` carry no mass and are skipped.
inline CifReference cif_reference(const std::vector<double>& alphas, double beta = 1.0,
                                  double min_piece = 1e-12) {
  const int T = static_cast<int>(alphas.size());
  std::vector<double> cum(T + 1, 0.0);
  for (int t = 0; t < T; ++t) cum[t + 1] = cum[t] + alphas[t];
  const double total = cum[T];
  const int full = static_cast<int>(std::floor((total + 1e-9) / beta));
  const double tail = total - full * beta;
  const int count = full + (tail >= 0.5 * beta && tail >= 1e-9 ? 1 : 0);

  CifReference ref;
  for (int k = 0; k < count; ++k) {
    const double lo = k * beta;
    const double hi = k < full ? (k + 1) * beta : total;
    Pieces p;
    for (int t = 0; t < T; ++t) {
      const double w = std::min(cum[t + 1], hi) - std::max(cum[t], lo);
      if (w > min_piece) p.emplace_back(t, w);
    }
    ref.events.push_back(std::move(p));
    ref.complete.push_back(k < full);
  }
  return ref;
}

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Collapse repeats, then drop blanks.
inline std::vector<int> ctc_collapse(const std::vector<int>& path, int blank) {
  std::vector<int> out;
  int prev = -1;
  for (int s : path) {
    if (s != prev && s != blank) out.push_back(s);
    prev = s;
  }
  return out;
}

// log P(label sequence) for every sequence reachable in T frames, by
// walking all (V+1)^T paths. The blank is the last column.
inline std::map<std::vector<int>, double> ctc_enumerate(const Matrix& log_probs) {
  const int T = static_cast<int>(log_probs.rows());
  const int K = static_cast<int>(log_probs.cols());
  std::map<std::vector<int>, double> out;
  std::vector<int> path(T, 0);
  while (true) {
    double lp = 0.0;
    for (int t = 0; t < T; ++t) lp += log_probs(t, path[t]);
    auto key = ctc_collapse(path, K - 1);
    auto it = out.find(key);
    if (it == out.end())
      out.emplace(std::move(key), lp);
    else
      it->second = log_add(it->second, lp);
    int t = T - 1;
    while (t >= 0 && ++path[t] == K) path[t--] = 0;
    if (t < 0) break;
  }
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& z) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : z) m = std::max(m, v);
  double s = 0.0;
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) s += (out[i] = std::exp(z[i] - m));
  for (double& v : out) v /= s;
  return out;
}

}  // namespace w2p::oracle
