#include "w2p/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "w2p/errors.hpp"

namespace w2p::metrics {

int edit_distance(const lm::Tokens& a, const lm::Tokens& b) {
  std::vector<int> row(b.size() + 1);
  std::iota(row.begin(), row.end(), 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    int diag = row[0];
    row[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

Summary summarize(const std::vector<lm::Tokens>& outputs, const std::vector<lm::Tokens>& targets) {
  if (outputs.size() != targets.size()) throw ShapeError("summarize: size mismatch");
  if (outputs.empty()) throw DegenerateInputError("summarize: no records");
  Summary s;
  s.count = outputs.size();
  std::size_t exact = 0, edits = 0, tokens = 0;
  double rate = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const int e = edit_distance(outputs[i], targets[i]);
    exact += e == 0 && outputs[i] == targets[i];
    edits += static_cast<std::size_t>(e);
    tokens += targets[i].size();
    rate += static_cast<double>(e) / static_cast<double>(std::max<std::size_t>(1, targets[i].size()));
  }
  const auto n = static_cast<double>(s.count);
  s.exact_match = 100.0 * static_cast<double>(exact) / n;
  s.token_accuracy =
      100.0 * (1.0 - static_cast<double>(edits) / static_cast<double>(std::max<std::size_t>(1, tokens)));
  s.edit_rate = rate / n;
  return s;
}

}  // namespace w2p::metrics
