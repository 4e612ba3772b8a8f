#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace adjsurv {

/// Worker count from ADJSURV_WORKERS, else `fallback`.
inline int workers_from_env(int fallback = 1) {
  if (const char* v = std::getenv("ADJSURV_WORKERS")) {
    try {
      const int w = std::stoi(v);
      if (w > 0) return w;
    } catch (...) {
    }
  }
  return fallback;
}

/// Runs fn(i) for i in [0, count) on a bounded pool. Items are claimed from
/// a shared counter; callers write results into per-index slots so the
/// outcome is independent of scheduling.
template <class Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
  workers = std::max(1, std::min<int>(workers, static_cast<int>(std::max<std::size_t>(count, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  {
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace adjsurv
