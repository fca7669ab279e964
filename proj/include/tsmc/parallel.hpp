#ifndef TSMC_PARALLEL_HPP_
#define TSMC_PARALLEL_HPP_

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace tsmc {

// Runs fn(i) for i in [0, n). Work is split into fixed-size chunks claimed
// from an atomic counter; fn(i) must only write to state owned by index i.
// Because the chunk layout does not depend on the worker count, any reduction
// done afterwards over per-index (or per-chunk) slots is bit-identical for
// every thread count.
inline void parallel_for(int64_t n, int threads,
                         const std::function<void(int64_t)>& fn,
                         int64_t chunk = 64) {
  if (n <= 0) return;
  if (threads <= 1 || n <= chunk) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next{0};
  auto worker = [&]() {
    for (;;) {
      int64_t begin = next.fetch_add(chunk);
      if (begin >= n) return;
      int64_t end = std::min(begin + chunk, n);
      for (int64_t i = begin; i < end; ++i) fn(i);
    }
  };
  int nw = static_cast<int>(std::min<int64_t>(threads, (n + chunk - 1) / chunk));
  std::vector<std::thread> pool;
  pool.reserve(nw);
  for (int w = 0; w < nw; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

// Chunked variant for reductions: fn(chunk_index, begin, end) accumulates into
// a buffer owned by chunk_index; the caller merges buffers in chunk order.
// num_chunks(n, chunk) is independent of the thread count.
inline int64_t num_chunks(int64_t n, int64_t chunk) {
  return (n + chunk - 1) / chunk;
}

inline void parallel_for_chunks(
    int64_t n, int threads, int64_t chunk,
    const std::function<void(int64_t, int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  int64_t chunks = num_chunks(n, chunk);
  if (threads <= 1 || chunks == 1) {
    for (int64_t c = 0; c < chunks; ++c)
      fn(c, c * chunk, std::min((c + 1) * chunk, n));
    return;
  }
  std::atomic<int64_t> next{0};
  auto worker = [&]() {
    for (;;) {
      int64_t c = next.fetch_add(1);
      if (c >= chunks) return;
      fn(c, c * chunk, std::min((c + 1) * chunk, n));
    }
  };
  int nw = static_cast<int>(std::min<int64_t>(threads, chunks));
  std::vector<std::thread> pool;
  pool.reserve(nw);
  for (int w = 0; w < nw; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

}  // namespace tsmc

#endif  // TSMC_PARALLEL_HPP_
