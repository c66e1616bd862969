#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace gnnlm {

// Worker cap: GNNLM_THREADS env var, else hardware concurrency.
inline unsigned max_threads() {
  static const unsigned cached = [] {
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("GNNLM_THREADS")) {
      long v = std::strtol(env, nullptr, 10);
      if (v >= 1) hw = std::min<unsigned>(hw, static_cast<unsigned>(v));
    }
    return hw;
  }();
  return cached;
}

// Static range partition over [0, n). Each index is processed by exactly one
// worker and per-index work is self-contained, so results do not depend on the
// thread count. Falls back to inline execution for small n.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t grain, Fn&& fn) {
  const unsigned workers = max_threads();
  if (n == 0) return;
  if (workers <= 1 || n <= grain) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t chunks = std::min<std::size_t>(workers, (n + grain - 1) / grain);
  const std::size_t step = (n + chunks - 1) / chunks;
  std::vector<std::thread> threads;
  threads.reserve(chunks - 1);
  for (std::size_t c = 1; c < chunks; ++c) {
    const std::size_t b = c * step;
    const std::size_t e = std::min(n, b + step);
    if (b >= e) break;
    threads.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::size_t{0}, std::min(n, step));
  for (auto& t : threads) t.join();
}

}  // namespace gnnlm
