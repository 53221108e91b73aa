// SPDX-License-Identifier: Apache-2.0
#include "synweather/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

#ifdef SYNWEATHER_HAVE_OPENBLAS_THREADS
#include <cblas.h>
#endif

namespace synweather {

static int detect_max_threads() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("SYNWEATHER_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) n = std::min<long>(v, 1024);
  }
#ifdef SYNWEATHER_HAVE_OPENBLAS_THREADS
  openblas_set_num_threads(n);
#endif
  return n;
}

int max_threads() {
  static int cached = detect_max_threads();
  return cached;
}

void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)>& body,
                  std::int64_t grain) {
  const std::int64_t n = end - begin;
  if (n <= 0) return;
  int workers = max_threads();
  if (grain < 1) grain = 1;
  workers = static_cast<int>(std::min<std::int64_t>(workers, (n + grain - 1) / grain));
  if (workers <= 1) {
    for (std::int64_t i = begin; i < end; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::int64_t lo = begin + w * chunk;
    const std::int64_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] {
      for (std::int64_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace synweather
