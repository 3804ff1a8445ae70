#pragma once

#include <cstddef>
#include <exception>
#include <mutex>
#include <vector>

namespace damm {

// Worker count: explicit request if > 0, else DAMM_WORKERS, else hardware concurrency.
int resolve_workers(int requested);

// Runs body(i) for i in [0, n) on `workers` threads with a static schedule.
// The first exception thrown by any iteration is rethrown on the caller.
template <class Body>
void parallel_for(std::size_t n, int workers, Body&& body) {
  if (n == 0) return;
  if (workers <= 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  const long long count = static_cast<long long>(n);
#pragma omp parallel for schedule(static) num_threads(workers)
  for (long long i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

// Deterministic reduction: [0, n) is cut into fixed-size chunks, each chunk
// is reduced independently (possibly in parallel), then partial results are
// combined in chunk order. The result does not depend on `workers`.
template <class T, class ChunkFn, class Combine>
T chunked_reduce(std::size_t n, std::size_t chunk, int workers, T init, ChunkFn&& chunk_fn,
                 Combine&& combine) {
  const std::size_t chunks = (n + chunk - 1) / chunk;
  std::vector<T> partial(chunks, init);
  parallel_for(chunks, workers, [&](std::size_t c) {
    const std::size_t begin = c * chunk;
    const std::size_t end = begin + chunk < n ? begin + chunk : n;
    partial[c] = chunk_fn(begin, end);
  });
  T total = std::move(init);
  for (auto& p : partial) total = combine(std::move(total), p);
  return total;
}

}  // namespace damm
