#pragma once

#include <algorithm>
#include <cstdint>
#include <thread>
#include <vector>

namespace flashdet {

inline int default_thread_count() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

// Splits [0, n) into contiguous chunks, one worker thread per chunk.
// Callers write disjoint output slots per index, so the result is identical
// for any thread count.
template <class Fn>
void parallel_for(std::int64_t n, int threads, Fn&& fn) {
  if (n <= 0) return;
  const std::int64_t workers =
      std::clamp<std::int64_t>(static_cast<std::int64_t>(threads), 1, n);
  if (workers == 1) {
    fn(static_cast<std::int64_t>(0), n);
    return;
  }
  const std::int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (std::int64_t w = 0; w < workers; ++w) {
    const std::int64_t lo = w * chunk;
    const std::int64_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace flashdet
