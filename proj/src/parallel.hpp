#pragma once

#include <cstddef>

namespace mkrf::detail {

// Width of internal data-parallel loops: MKRF_THREADS if set, else the
// OpenMP default (1 when built without OpenMP).
int worker_count();

// Grid loops below this size stay serial.
inline constexpr std::size_t kParallelThreshold = 16384;

}  // namespace mkrf::detail

#if defined(_OPENMP)
#define MKRF_PRAGMA(x) _Pragma(#x)
#define MKRF_PARALLEL_FOR(count)                                               \
  MKRF_PRAGMA(omp parallel for schedule(static)                                \
                  num_threads(::mkrf::detail::worker_count())                  \
                      if ((count) >= ::mkrf::detail::kParallelThreshold))
#else
#define MKRF_PARALLEL_FOR(count)
#endif
