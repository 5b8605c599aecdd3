#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mmou {

/// Paths per work unit for Monte Carlo kernels.
inline constexpr std::size_t kPathChunk = 1024;

/// Default worker count: the number of hardware threads (at least 1).
inline int default_threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs body(chunk_index, begin, end) over [0, n) split into fixed-size chunks.
///
/// Chunk boundaries depend only on n and chunk_size, never on the thread
/// count; callers that reduce per-chunk partials in chunk order therefore get
/// bit-identical results for any number of threads. The first exception thrown
/// by a body is rethrown on the calling thread.
template <class Body>
void parallel_chunks(std::size_t n, std::size_t chunk_size, int threads, Body&& body) {
  if (n == 0) return;
  chunk_size = std::max<std::size_t>(chunk_size, 1);
  const std::size_t chunks = (n + chunk_size - 1) / chunk_size;
  const std::size_t workers =
      std::min<std::size_t>(chunks, static_cast<std::size_t>(std::max(threads, 1)));

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= chunks) return;
      try {
        const std::size_t begin = c * chunk_size;
        body(c, begin, std::min(n, begin + chunk_size));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(chunks);
      }
    }
  };

  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t i = 1; i < workers; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace mmou
