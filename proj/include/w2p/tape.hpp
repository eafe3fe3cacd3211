#pragma once

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "w2p/matrix.hpp"

namespace w2p::diff {

// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode recorder over a closed set of matrix primitives.
//
// Every primitive checks shapes when it is recorded and throws ShapeError on
// mismatch. Values that do not require a gradient (constants, frozen
// parameters) are never given one, and backward skips any node whose inputs
// are all constant.
//
// A Tape is single-use and single-threaded: record a forward pass, call
// backward once, read gradients.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves.
  Var constant(Matrix value);
  Var input(Matrix value);  // requires a gradient
  // Refers to `external` without copying; it must outlive the tape.
  Var bind(const Matrix& external, bool requires_grad);

  const Matrix& value(Var v) const;
  // Empty (0x0) when no gradient reached `v`.
  const Matrix& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  Eigen::Index rows(Var v) const { return value(v).rows(); }
  Eigen::Index cols(Var v) const { return value(v).cols(); }
  double scalar(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Linear algebra.
  Var matmul(Var a, Var b);     // a * b
  Var matmul_nt(Var a, Var b);  // a * b^T

  // Elementwise with broadcasting: `b` may match `a`, be a 1 x cols row, a
  // rows x 1 column, or a 1 x 1 scalar.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var scale(Var a, double c);

  Var logistic(Var a);
  Var tanh(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var relu(Var a);
  Var abs(Var a);  // subgradient 0 at 0

  // Row-wise. With `causal`, entry (i, j) for j > i is masked out.
  Var softmax_rows(Var a, bool causal = false);
  Var log_softmax_rows(Var a);
  // (x - mean) / sqrt(var + eps) per row, no affine part.
  Var layer_norm_rows(Var a, double eps = 1e-5);

  Var sum(Var a);  // 1 x 1

  Var concat_rows(std::span<const Var> parts);
  Var concat_cols(std::span<const Var> parts);
  Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count);
  Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count);
  // Row i of the result is row idx[i] of `a`, or zeros when idx[i] < 0.
  Var gather_rows(Var a, std::span<const int> idx);
  // Column vector of a(r, c) for each (r, c).
  Var pick(Var a, std::span<const std::pair<int, int>> entries);

  // Escape hatch for composite primitives with a hand-derived backward
  // (the CIF contribution map). `backward` must accumulate into inputs via
  // grad_accumulator().
  Var custom(Matrix value, std::vector<Var> inputs, BackwardFn backward);

  // Gradient buffer of `v`, zero-initialised on first use. Only valid inside
  // backward callbacks for nodes that require a gradient.
  Matrix& grad_accumulator(Var v);
  const Matrix& grad_of_node(int self) const { return nodes_[self].grad; }

  // Seeds d(loss)/d(loss) = 1 and propagates. Throws NonFiniteError when the
  // loss is not finite and ShapeError when it is not 1 x 1.
  void backward(Var loss);

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Matrix value, bool requires_grad, BackwardFn backward);
  bool any_requires_grad(std::initializer_list<Var> vs) const;
  void check(Var v) const;

  std::vector<Node> nodes_;
};

}  // namespace w2p::diff
