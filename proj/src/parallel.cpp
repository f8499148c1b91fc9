#include "ascnet/parallel.hpp"

namespace ascnet {

namespace {
std::atomic<int> g_override{0};
}

int thread_limit() {
  if (int o = g_override.load(); o > 0) return o;
  if (const char* env = std::getenv("ASC_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void set_thread_limit(int n) { g_override = n; }

}  // namespace ascnet
