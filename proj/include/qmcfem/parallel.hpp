#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace qmcfem {

/// Worker count for a request; 0 or negative means hardware concurrency.
inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Number of workers parallel_for will use for n items.
inline int worker_count(int n, int threads) { return std::max(1, std::min(n, resolve_threads(threads))); }

/// Calls fn(i, worker) for i in [0, n). Indices are claimed dynamically, so
/// callers must write results to per-index slots and reduce afterwards in
/// index order to stay independent of scheduling. The first exception thrown
/// by any worker is rethrown after all workers stop.
template <class F>
void parallel_for(int n, int threads, F&& fn) {
  if (n <= 0) return;
  const int workers = worker_count(n, threads);
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&](int worker) {
    while (!failed.load(std::memory_order_relaxed)) {
      const int i = next.fetch_add(1);
      if (i >= n) break;
      try {
        fn(i, worker);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int w = 1; w < workers; ++w) pool.emplace_back(body, w);
  body(0);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace qmcfem
