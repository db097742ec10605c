#include "parallel.hpp"

#include <cstdlib>
#include <string>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace mkrf::detail {

int worker_count() {
  static const int count = [] {
    int cap = 0;
    if (const char* env = std::getenv("MKRF_THREADS")) {
      try {
        cap = std::stoi(env);
      } catch (...) {
        cap = 0;
      }
    }
#if defined(_OPENMP)
    const int available = omp_get_max_threads();
#else
    const int available = 1;
#endif
    return cap > 0 && cap < available ? cap : available;
  }();
  return count;
}

}  // namespace mkrf::detail
