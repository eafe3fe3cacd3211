#include "w2p/tape.hpp"

#include <cmath>
#include <sstream>

#include "w2p/errors.hpp"

namespace w2p::diff {

namespace {

enum class Broadcast { Same, Row, Col, Scalar };

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

Broadcast classify(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::Same;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::Scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::Col;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b) + " onto " +
                   shape_str(a));
}

Matrix expand(const Matrix& b, Broadcast kind, Eigen::Index rows, Eigen::Index cols) {
  switch (kind) {
    case Broadcast::Same:
      return b;
    case Broadcast::Row:
      return b.replicate(rows, 1);
    case Broadcast::Col:
      return b.replicate(1, cols);
    case Broadcast::Scalar:
      return Matrix::Constant(rows, cols, b(0, 0));
  }
  return b;
}

Matrix reduce(const Matrix& g, Broadcast kind) {
  switch (kind) {
    case Broadcast::Same:
      return g;
    case Broadcast::Row:
      return g.colwise().sum();
    case Broadcast::Col:
      return g.rowwise().sum();
    case Broadcast::Scalar:
      return Matrix::Constant(1, 1, g.sum());
  }
  return g;
}

}  // namespace

void Tape::check(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw ShapeError("invalid tape variable");
}

Var Tape::push(Matrix value, bool requires_grad, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

bool Tape::any_requires_grad(std::initializer_list<Var> vs) const {
  for (Var v : vs)
    if (nodes_[v.id].requires_grad) return true;
  return false;
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, {}); }

Var Tape::input(Matrix value) { return push(std::move(value), true, {}); }

Var Tape::bind(const Matrix& external, bool requires_grad) {
  Node n;
  n.external = &external;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Tape::value(Var v) const {
  check(v);
  const Node& n = nodes_[v.id];
  return n.external ? *n.external : n.value;
}

const Matrix& Tape::grad(Var v) const {
  check(v);
  return nodes_[v.id].grad;
}

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) throw ShapeError("scalar: value is " + shape_str(m));
  return m(0, 0);
}

Matrix& Tape::grad_accumulator(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() == 0) {
    const Matrix& val = n.external ? *n.external : n.value;
    n.grad = Matrix::Zero(val.rows(), val.cols());
  }
  return n.grad;
}

Var Tape::matmul(Var a, Var b) {
  check(a);
  check(b);
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  if (va.cols() != vb.rows())
    throw ShapeError("matmul: " + shape_str(va) + " * " + shape_str(vb));
  Matrix out(va.rows(), vb.cols());
  out.noalias() = va * vb;
  return push(std::move(out), any_requires_grad({a, b}), [a, b](Tape& t, int self) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.requires_grad(a)) t.grad_accumulator(a).noalias() += g * t.value(b).transpose();
    if (t.requires_grad(b)) t.grad_accumulator(b).noalias() += t.value(a).transpose() * g;
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  check(a);
  check(b);
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  if (va.cols() != vb.cols())
    throw ShapeError("matmul_nt: " + shape_str(va) + " * (" + shape_str(vb) + ")^T");
  Matrix out(va.rows(), vb.rows());
  out.noalias() = va * vb.transpose();
  return push(std::move(out), any_requires_grad({a, b}), [a, b](Tape& t, int self) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.requires_grad(a)) t.grad_accumulator(a).noalias() += g * t.value(b);
    if (t.requires_grad(b)) t.grad_accumulator(b).noalias() += g.transpose() * t.value(a);
  });
}

Var Tape::add(Var a, Var b) {
  check(a);
  check(b);
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  const Broadcast kind = classify(va, vb, "add");
  Matrix out = kind == Broadcast::Same ? Matrix(va + vb)
                                       : Matrix(va + expand(vb, kind, va.rows(), va.cols()));
  return push(std::move(out), any_requires_grad({a, b}), [a, b, kind](Tape& t, int self) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.requires_grad(a)) t.grad_accumulator(a) += g;
    if (t.requires_grad(b)) t.grad_accumulator(b) += reduce(g, kind);
  });
}

Var Tape::sub(Var a, Var b) {
  check(a);
  check(b);
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  const Broadcast kind = classify(va, vb, "sub");
  Matrix out = kind == Broadcast::Same ? Matrix(va - vb)
                                       : Matrix(va - expand(vb, kind, va.rows(), va.cols()));
  return push(std::move(out), any_requires_grad({a, b}), [a, b, kind](Tape& t, int self) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.requires_grad(a)) t.grad_accumulator(a) += g;
    if (t.requires_grad(b)) t.grad_accumulator(b) -= reduce(g, kind);
  });
}

Var Tape::mul(Var a, Var b) {
  check(a);
  check(b);
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  const Broadcast kind = classify(va, vb, "mul");
  Matrix out = kind == Broadcast::Same
                   ? Matrix(va.cwiseProduct(vb))
                   : Matrix(va.cwiseProduct(expand(vb, kind, va.rows(), va.cols())));
  return push(std::move(out), any_requires_grad({a, b}), [a, b, kind](Tape& t, int self) {
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& va = t.value(a);
    const Matrix& vb = t.value(b);
    if (t.requires_grad(a)) {
      if (kind == Broadcast::Same)
        t.grad_accumulator(a) += g.cwiseProduct(vb);
      else
        t.grad_accumulator(a) += g.cwiseProduct(expand(vb, kind, va.rows(), va.cols()));
    }
    if (t.requires_grad(b)) t.grad_accumulator(b) += reduce(g.cwiseProduct(va), kind);
  });
}

Var Tape::div(Var a, Var b) {
  check(a);
  check(b);
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  const Broadcast kind = classify(va, vb, "div");
  Matrix out = kind == Broadcast::Same
                   ? Matrix(va.cwiseQuotient(vb))
                   : Matrix(va.cwiseQuotient(expand(vb, kind, va.rows(), va.cols())));
  return push(std::move(out), any_requires_grad({a, b}), [a, b, kind](Tape& t, int self) {
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& va = t.value(a);
    const Matrix bx = expand(t.value(b), kind, va.rows(), va.cols());
    if (t.requires_grad(a)) t.grad_accumulator(a) += g.cwiseQuotient(bx);
    if (t.requires_grad(b)) {
      Matrix gb = -(g.array() * va.array() / bx.array().square()).matrix();
      t.grad_accumulator(b) += reduce(gb, kind);
    }
  });
}

Var Tape::scale(Var a, double c) {
  check(a);
  return push(value(a) * c, any_requires_grad({a}), [a, c](Tape& t, int self) {
    t.grad_accumulator(a) += c * t.nodes_[self].grad;
  });
}

Var Tape::logistic(Var a) {
  check(a);
  Matrix out = value(a).unaryExpr([](double x) {
    // Split by sign so exp never overflows.
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return push(std::move(out), any_requires_grad({a}), [a](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    t.grad_accumulator(a).array() += n.grad.array() * n.value.array() * (1.0 - n.value.array());
  });
}

Var Tape::tanh(Var a) {
  check(a);
  Matrix out = value(a).array().tanh().matrix();
  return push(std::move(out), any_requires_grad({a}), [a](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    t.grad_accumulator(a).array() += n.grad.array() * (1.0 - n.value.array().square());
  });
}

Var Tape::exp(Var a) {
  check(a);
  Matrix out = value(a).array().exp().matrix();
  return push(std::move(out), any_requires_grad({a}), [a](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    t.grad_accumulator(a).array() += n.grad.array() * n.value.array();
  });
}

Var Tape::log(Var a) {
  check(a);
  Matrix out = value(a).array().log().matrix();
  return push(std::move(out), any_requires_grad({a}), [a](Tape& t, int self) {
    t.grad_accumulator(a).array() += t.nodes_[self].grad.array() / t.value(a).array();
  });
}

Var Tape::relu(Var a) {
  check(a);
  Matrix out = value(a).cwiseMax(0.0);
  return push(std::move(out), any_requires_grad({a}), [a](Tape& t, int self) {
    const Matrix& x = t.value(a);
    t.grad_accumulator(a).array() +=
        t.nodes_[self].grad.array() * (x.array() > 0.0).cast<double>();
  });
}

Var Tape::abs(Var a) {
  check(a);
  Matrix out = value(a).cwiseAbs();
  return push(std::move(out), any_requires_grad({a}), [a](Tape& t, int self) {
    const Matrix& x = t.value(a);
    Matrix sign = x.unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
    t.grad_accumulator(a).array() += t.nodes_[self].grad.array() * sign.array();
  });
}

Var Tape::softmax_rows(Var a, bool causal) {
  check(a);
  const Matrix& x = value(a);
  if (causal && x.rows() > x.cols())
    throw ShapeError("softmax_rows: causal mask needs cols >= rows, got " + shape_str(x));
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::Index n = causal ? i + 1 : x.cols();
    const double m = x.row(i).head(n).maxCoeff();
    double z = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      out(i, j) = std::exp(x(i, j) - m);
      z += out(i, j);
    }
    out.row(i).head(n) /= z;
  }
  return push(std::move(out), any_requires_grad({a}), [a](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    const Matrix& y = n.value;
    const ColVector dot = n.grad.cwiseProduct(y).rowwise().sum();
    Matrix& ga = t.grad_accumulator(a);
    for (Eigen::Index i = 0; i < y.rows(); ++i)
      ga.row(i).array() += y.row(i).array() * (n.grad.row(i).array() - dot(i));
  });
}

Var Tape::log_softmax_rows(Var a) {
  check(a);
  const Matrix& x = value(a);
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    const double lse = m + std::log((x.row(i).array() - m).exp().sum());
    out.row(i).array() = x.row(i).array() - lse;
  }
  return push(std::move(out), any_requires_grad({a}), [a](Tape& t, int self) {
    const Node& n = t.nodes_[self];
    const ColVector gsum = n.grad.rowwise().sum();
    Matrix& ga = t.grad_accumulator(a);
    for (Eigen::Index i = 0; i < n.value.rows(); ++i)
      ga.row(i).array() += n.grad.row(i).array() - n.value.row(i).array().exp() * gsum(i);
  });
}

Var Tape::layer_norm_rows(Var a, double eps) {
  check(a);
  const Matrix& x = value(a);
  const double d = static_cast<double>(x.cols());
  Matrix out(x.rows(), x.cols());
  ColVector inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().sum() / d;
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    out.row(i).array() = (x.row(i).array() - mean) * inv_std(i);
  }
  return push(std::move(out), any_requires_grad({a}),
              [a, inv_std = std::move(inv_std), d](Tape& t, int self) {
                const Node& n = t.nodes_[self];
                const Matrix& y = n.value;
                const Matrix& g = n.grad;
                Matrix& ga = t.grad_accumulator(a);
                for (Eigen::Index i = 0; i < y.rows(); ++i) {
                  const double gmean = g.row(i).sum() / d;
                  const double gymean = g.row(i).dot(y.row(i)) / d;
                  ga.row(i).array() +=
                      inv_std(i) * (g.row(i).array() - gmean - y.row(i).array() * gymean);
                }
              });
}

Var Tape::sum(Var a) {
  check(a);
  return push(Matrix::Constant(1, 1, value(a).sum()), any_requires_grad({a}),
              [a](Tape& t, int self) {
                t.grad_accumulator(a).array() += t.nodes_[self].grad(0, 0);
              });
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = value(parts[0]).cols();
  bool rg = false;
  for (Var p : parts) {
    check(p);
    if (value(p).cols() != cols)
      throw ShapeError("concat_rows: column mismatch " + shape_str(value(p)));
    rows += value(p).rows();
    rg = rg || requires_grad(p);
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    const Matrix& v = value(p);
    if (v.rows() > 0) out.middleRows(r, v.rows()) = v;
    r += v.rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return push(std::move(out), rg, [ps = std::move(ps)](Tape& t, int self) {
    const Matrix& g = t.nodes_[self].grad;
    Eigen::Index r = 0;
    for (Var p : ps) {
      const Eigen::Index n = t.value(p).rows();
      if (t.requires_grad(p) && n > 0) t.grad_accumulator(p) += g.middleRows(r, n);
      r += n;
    }
  });
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Eigen::Index cols = 0;
  const Eigen::Index rows = value(parts[0]).rows();
  bool rg = false;
  for (Var p : parts) {
    check(p);
    if (value(p).rows() != rows)
      throw ShapeError("concat_cols: row mismatch " + shape_str(value(p)));
    cols += value(p).cols();
    rg = rg || requires_grad(p);
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    const Matrix& v = value(p);
    if (v.cols() > 0) out.middleCols(c, v.cols()) = v;
    c += v.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return push(std::move(out), rg, [ps = std::move(ps)](Tape& t, int self) {
    const Matrix& g = t.nodes_[self].grad;
    Eigen::Index c = 0;
    for (Var p : ps) {
      const Eigen::Index n = t.value(p).cols();
      if (t.requires_grad(p) && n > 0) t.grad_accumulator(p) += g.middleCols(c, n);
      c += n;
    }
  });
}

Var Tape::slice_rows(Var a, Eigen::Index begin, Eigen::Index count) {
  check(a);
  const Matrix& x = value(a);
  if (begin < 0 || count < 0 || begin + count > x.rows())
    throw ShapeError("slice_rows: out of range on " + shape_str(x));
  return push(x.middleRows(begin, count), any_requires_grad({a}),
              [a, begin, count](Tape& t, int self) {
                t.grad_accumulator(a).middleRows(begin, count) += t.nodes_[self].grad;
              });
}

Var Tape::slice_cols(Var a, Eigen::Index begin, Eigen::Index count) {
  check(a);
  const Matrix& x = value(a);
  if (begin < 0 || count < 0 || begin + count > x.cols())
    throw ShapeError("slice_cols: out of range on " + shape_str(x));
  return push(x.middleCols(begin, count), any_requires_grad({a}),
              [a, begin, count](Tape& t, int self) {
                t.grad_accumulator(a).middleCols(begin, count) += t.nodes_[self].grad;
              });
}

Var Tape::gather_rows(Var a, std::span<const int> idx) {
  check(a);
  const Matrix& x = value(a);
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= x.rows()) throw ShapeError("gather_rows: index out of range");
    if (idx[i] >= 0) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  }
  std::vector<int> ix(idx.begin(), idx.end());
  return push(std::move(out), any_requires_grad({a}), [a, ix = std::move(ix)](Tape& t, int self) {
    const Matrix& g = t.nodes_[self].grad;
    Matrix& ga = t.grad_accumulator(a);
    for (std::size_t i = 0; i < ix.size(); ++i)
      if (ix[i] >= 0) ga.row(ix[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var Tape::pick(Var a, std::span<const std::pair<int, int>> entries) {
  check(a);
  const Matrix& x = value(a);
  Matrix out(static_cast<Eigen::Index>(entries.size()), 1);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto [r, c] = entries[i];
    if (r < 0 || c < 0 || r >= x.rows() || c >= x.cols())
      throw ShapeError("pick: entry out of range on " + shape_str(x));
    out(static_cast<Eigen::Index>(i), 0) = x(r, c);
  }
  std::vector<std::pair<int, int>> es(entries.begin(), entries.end());
  return push(std::move(out), any_requires_grad({a}), [a, es = std::move(es)](Tape& t, int self) {
    const Matrix& g = t.nodes_[self].grad;
    Matrix& ga = t.grad_accumulator(a);
    for (std::size_t i = 0; i < es.size(); ++i)
      ga(es[i].first, es[i].second) += g(static_cast<Eigen::Index>(i), 0);
  });
}

Var Tape::custom(Matrix value, std::vector<Var> inputs, BackwardFn backward) {
  bool rg = false;
  for (Var v : inputs) {
    check(v);
    rg = rg || requires_grad(v);
  }
  return push(std::move(value), rg, std::move(backward));
}

void Tape::backward(Var loss) {
  check(loss);
  const Matrix& l = value(loss);
  if (l.rows() != 1 || l.cols() != 1) throw ShapeError("backward: loss is " + shape_str(l));
  if (!std::isfinite(l(0, 0))) throw NonFiniteError("backward: loss is not finite");
  if (!nodes_[loss.id].requires_grad) return;
  grad_accumulator(loss)(0, 0) += 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    n.backward(*this, i);
  }
}

}  // namespace w2p::diff
