#pragma once

#include <stdexcept>
#include <string>

namespace w2p {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct NonFiniteError : Error {
  using Error::Error;
};

// All firing logits at -inf, an empty token sequence, and similar inputs
// that have no meaningful result.
struct DegenerateInputError : Error {
  using Error::Error;
};

struct IntegrityError : Error {
  using Error::Error;
};

struct InfeasibleAlignmentError : Error {
  using Error::Error;
};

struct ContextOverflowError : Error {
  using Error::Error;
};

struct UsageError : Error {
  using Error::Error;
};

}  // namespace w2p
