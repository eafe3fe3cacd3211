#include "w2p/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "w2p/errors.hpp"

namespace w2p::diff {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

void fnv_u64(std::uint64_t& h, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  fnv_bytes(h, b, 8);
}

}  // namespace

ParamId ParamSet::add(std::string name, Matrix value, bool trainable) {
  if (index_.count(name)) throw UsageError("duplicate parameter name: " + name);
  const ParamId id = static_cast<ParamId>(params_.size());
  index_.emplace(name, id);
  params_.emplace_back(std::move(name), std::move(value), trainable);
  return id;
}

ParamId ParamSet::add_weight(std::string name, int fan_in, int fan_out, bool trainable,
                             std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return add(std::move(name), std::move(w), trainable);
}

ParamId ParamSet::add_bias(std::string name, int size, bool trainable) {
  return add(std::move(name), Matrix::Zero(1, size), trainable);
}

ParamId ParamSet::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? -1 : it->second;
}

ParamId ParamSet::id(std::string_view name) const {
  const ParamId i = find(name);
  if (i < 0) throw UsageError("unknown parameter: " + std::string(name));
  return i;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value().size());
  return n;
}

std::size_t ParamSet::trainable_scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.trainable()) n += static_cast<std::size_t>(p.value().size());
  return n;
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& p : params_) {
    fnv_bytes(h, p.name().data(), p.name().size());
    fnv_u64(h, static_cast<std::uint64_t>(p.value().rows()));
    fnv_u64(h, static_cast<std::uint64_t>(p.value().cols()));
    for (Eigen::Index i = 0; i < p.value().size(); ++i)
      fnv_u64(h, std::bit_cast<std::uint64_t>(p.value().data()[i]));
  }
  return h;
}

void ParamSet::assign_values(const ParamSet& other) {
  if (other.size() != size()) throw ShapeError("assign_values: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Param& src = other.params_[i];
    Param& dst = params_[i];
    if (src.name() != dst.name() || src.value().rows() != dst.value().rows() ||
        src.value().cols() != dst.value().cols())
      throw ShapeError("assign_values: layout mismatch at " + dst.name());
    dst.value() = src.value();
  }
}

ParamSet ParamSet::frozen_copy() const {
  ParamSet out;
  for (const auto& p : params_) out.add(p.name(), p.value(), false);
  return out;
}

bool ParamSet::operator==(const ParamSet& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Param& a = params_[i];
    const Param& b = other.params_[i];
    if (a.name() != b.name() || a.trainable() != b.trainable()) return false;
    if (a.value().rows() != b.value().rows() || a.value().cols() != b.value().cols())
      return false;
    if (std::memcmp(a.value().data(), b.value().data(),
                    sizeof(double) * static_cast<std::size_t>(a.value().size())) != 0)
      return false;
  }
  return true;
}

Gradients Gradients::zeros_like(const ParamSet& params) {
  Gradients g;
  g.grads.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Param& p = params[static_cast<ParamId>(i)];
    if (p.trainable()) g.grads[i] = Matrix::Zero(p.value().rows(), p.value().cols());
  }
  return g;
}

void Gradients::add(const Gradients& other) {
  if (other.grads.size() != grads.size()) throw ShapeError("Gradients::add: size mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (other.grads[i].size() == 0) continue;
    if (grads[i].size() == 0)
      grads[i] = other.grads[i];
    else
      grads[i] += other.grads[i];
  }
}

void Gradients::scale(double c) {
  for (auto& g : grads)
    if (g.size()) g *= c;
}

double Gradients::norm() const {
  double s = 0.0;
  for (const auto& g : grads)
    if (g.size()) s += g.squaredNorm();
  return std::sqrt(s);
}

Binder::Binder(Tape& tape, const ParamSet& params)
    : tape_(tape), params_(params), vars_(params.size()) {}

Var Binder::operator()(ParamId id) {
  Var& v = vars_.at(id);
  if (!v.valid()) {
    const Param& p = params_[id];
    v = tape_.bind(p.value(), p.trainable());
  }
  return v;
}

void Binder::accumulate(Gradients& out) const {
  if (out.grads.size() != params_.size()) throw ShapeError("Binder::accumulate: size mismatch");
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    const Param& p = params_[static_cast<ParamId>(i)];
    if (!p.trainable() || !vars_[i].valid()) continue;
    const Matrix& g = tape_.grad(vars_[i]);
    if (g.size() == 0) continue;
    if (out.grads[i].size() == 0)
      out.grads[i] = g;
    else
      out.grads[i] += g;
  }
}

Gradients Binder::gradients() const {
  Gradients g = Gradients::zeros_like(params_);
  accumulate(g);
  return g;
}

}  // namespace w2p::diff
