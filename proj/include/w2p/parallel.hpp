#pragma once

#include <cstddef>
#include <exception>
#include <string>
#include <vector>

#include "w2p/params.hpp"

namespace w2p::par {

// Serial is the reference path; OpenMP must reproduce it bit for bit.
enum class Exec { Serial, OpenMP };

Exec parse_exec(const std::string& s);
std::string to_string(Exec e);
int max_threads();

// results[i] = fn(i) for i in [0, n). Output order never depends on the
// schedule. The first exception thrown by any call is rethrown.
template <class T, class Fn>
std::vector<T> map_indexed(std::size_t n, Fn&& fn, Exec exec) {
  std::vector<T> out(n);
  if (exec == Exec::Serial || n < 2) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::exception_ptr error;
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      out[static_cast<std::size_t>(i)] = fn(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(w2p_map_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return out;
}

template <class Stats>
struct ExampleGrad {
  Stats stats{};
  diff::Gradients grads;
};

template <class Stats>
struct BatchGrad {
  std::vector<Stats> stats;  // per example, in input order
  diff::Gradients grads;     // summed in input order
};

// Per-example gradients reduced in example order, so both execution paths
// produce identical sums.
template <class Stats, class Fn>
BatchGrad<Stats> batch_gradients(std::size_t n, const diff::ParamSet& params, Fn&& fn,
                                 Exec exec) {
  BatchGrad<Stats> out;
  out.grads = diff::Gradients::zeros_like(params);
  out.stats.reserve(n);
  if (exec == Exec::Serial) {
    for (std::size_t i = 0; i < n; ++i) {
      ExampleGrad<Stats> eg = fn(i);
      out.grads.add(eg.grads);
      out.stats.push_back(std::move(eg.stats));
    }
    return out;
  }
  auto per_example = map_indexed<ExampleGrad<Stats>>(n, fn, exec);
  for (auto& eg : per_example) {
    out.grads.add(eg.grads);
    out.stats.push_back(std::move(eg.stats));
  }
  return out;
}

}  // namespace w2p::par
