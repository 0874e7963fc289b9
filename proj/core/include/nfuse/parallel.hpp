#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace nfuse {

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Static block partition of [0, n): worker w handles one contiguous chunk.
/// The chunk map depends only on (n, threads), never on scheduling, so any
/// per-chunk output can be merged in chunk order for deterministic results.
template <typename Fn>
void parallel_chunks(int64_t n, int threads, Fn&& fn) {
  threads = static_cast<int>(
      std::max<int64_t>(1, std::min<int64_t>(threads, n > 0 ? n : 1)));
  if (threads == 1 || n <= 0) {
    if (n > 0) fn(0, int64_t{0}, n);
    return;
  }
  const int64_t chunk = (n + threads - 1) / threads;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int w = 0; w < threads; ++w) {
    const int64_t begin = w * chunk;
    const int64_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, w, begin, end] { fn(w, begin, end); });
  }
  for (auto& t : pool) t.join();
}

/// parallel map over indices; fn(i) must only write to index-i slots.
template <typename Fn>
void parallel_for(int64_t n, int threads, Fn&& fn) {
  parallel_chunks(n, threads, [&fn](int, int64_t begin, int64_t end) {
    for (int64_t i = begin; i < end; ++i) fn(i);
  });
}

}  // namespace nfuse
