#pragma once

#include <cstdint>

#include <omp.h>

namespace rdpo {

inline int default_jobs() { return omp_get_max_threads(); }

// Runs fn(i) for i in [0, n). Tasks must write only their own output slots;
// any reduction over task results happens afterwards in index order, which
// keeps results byte-identical for every jobs value.
template <class F>
void parallel_for(int64_t n, int jobs, F&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
#pragma omp parallel for schedule(dynamic, 1) num_threads(jobs)
  for (int64_t i = 0; i < n; ++i) {
    fn(i);
  }
}

}  // namespace rdpo
