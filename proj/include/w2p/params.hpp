#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "w2p/matrix.hpp"
#include "w2p/tape.hpp"

namespace w2p::diff {

class Param {
 public:
  Param(std::string name, Matrix value, bool trainable)
      : name_(std::move(name)), value_(std::move(value)), trainable_(trainable) {}

  const std::string& name() const { return name_; }
  bool trainable() const { return trainable_; }
  const Matrix& value() const { return value_; }
  Matrix& value() { return value_; }

 private:
  std::string name_;
  Matrix value_;
  bool trainable_;
};

using ParamId = int;

// Named parameter arrays owned by one module. The trainable flag of each
// entry is fixed when it is added.
class ParamSet {
 public:
  ParamId add(std::string name, Matrix value, bool trainable);
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weight, fan_in = rows.
  ParamId add_weight(std::string name, int fan_in, int fan_out, bool trainable,
                     std::mt19937_64& rng);
  ParamId add_bias(std::string name, int size, bool trainable);

  std::size_t size() const { return params_.size(); }
  const Param& operator[](ParamId id) const { return params_.at(id); }
  Param& operator[](ParamId id) { return params_.at(id); }
  ParamId find(std::string_view name) const;  // -1 when absent
  ParamId id(std::string_view name) const;    // throws when absent
  const std::vector<Param>& params() const { return params_; }

  std::size_t scalar_count() const;
  std::size_t trainable_scalar_count() const;

  // FNV-1a over names, shapes and little-endian value bytes.
  std::uint64_t checksum() const;

  // Same names, shapes and flags; values overwritten from `other`.
  void assign_values(const ParamSet& other);

  // A copy with every entry frozen.
  ParamSet frozen_copy() const;

  bool operator==(const ParamSet& other) const;

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, ParamId> index_;
};

// Gradients aligned with a ParamSet. Entries for frozen parameters stay
// empty (0x0) and are never written.
struct Gradients {
  std::vector<Matrix> grads;

  static Gradients zeros_like(const ParamSet& params);
  void add(const Gradients& other);
  void scale(double c);
  double norm() const;
  bool has(ParamId id) const { return grads.at(id).size() > 0; }
};

// Binds a ParamSet onto a Tape on first use.
class Binder {
 public:
  Binder(Tape& tape, const ParamSet& params);

  Var operator()(ParamId id);
  Var operator()(std::string_view name) { return (*this)(params_.id(name)); }
  const ParamSet& params() const { return params_; }

  // Adds the tape gradients of trainable parameters into `out`.
  void accumulate(Gradients& out) const;
  Gradients gradients() const;

 private:
  Tape& tape_;
  const ParamSet& params_;
  std::vector<Var> vars_;
};

}  // namespace w2p::diff
