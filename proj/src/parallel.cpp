#include "w2p/parallel.hpp"

#include <omp.h>

#include "w2p/errors.hpp"

namespace w2p::par {

Exec parse_exec(const std::string& s) {
  if (s == "serial") return Exec::Serial;
  if (s == "openmp" || s == "omp") return Exec::OpenMP;
  throw UsageError("unknown execution mode: " + s);
}

std::string to_string(Exec e) { return e == Exec::Serial ? "serial" : "openmp"; }

int max_threads() { return omp_get_max_threads(); }

}  // namespace w2p::par
