#pragma once

#include <cstddef>
#include <vector>

#include "w2p/vocab.hpp"

namespace w2p::metrics {

// Token-level Levenshtein distance.
int edit_distance(const lm::Tokens& a, const lm::Tokens& b);

struct Summary {
  std::size_t count = 0;
  double exact_match = 0.0;     // percent of outputs equal to their target
  double token_accuracy = 0.0;  // percent, 100 * (1 - total edits / total target tokens)
  double edit_rate = 0.0;       // mean per-record edits / target length
};

// Throws DegenerateInputError on an empty set.
Summary summarize(const std::vector<lm::Tokens>& outputs, const std::vector<lm::Tokens>& targets);

}  // namespace w2p::metrics
