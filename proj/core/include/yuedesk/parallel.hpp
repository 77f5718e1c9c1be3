#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace yuedesk {

// Worker count for the optional pools (corpus generation, all-pairs
// similarity). YUE_DESK_THREADS caps it when set.
inline int worker_count() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("YUE_DESK_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return n;
}

// Splits [0, n) into contiguous chunks, one per worker. Chunk boundaries
// depend only on n and the worker count, and results are written to disjoint
// ranges, so output stays deterministic.
inline void parallel_for_chunks(
    std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
  const int workers = std::min<std::size_t>(worker_count(), n == 0 ? 1 : n);
  if (workers <= 1 || n == 0) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::size_t begin = static_cast<std::size_t>(w) * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (std::thread& t : pool) t.join();
}

}  // namespace yuedesk
