#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace ascnet {

/// Worker count: ASC_THREADS when set, else hardware concurrency. A value
/// set through set_thread_limit() (e.g. --deterministic -> 1) takes priority.
int thread_limit();
void set_thread_limit(int n);

/// Runs f(i) for i in [0, n). Every index writes only its own outputs, so
/// results do not depend on the worker count.
template <typename F>
void parallel_for(int n, F&& f) {
  const int workers = std::min(thread_limit(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) f(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace ascnet
