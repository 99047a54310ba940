#pragma once

#include "mlmatvamp/core.hpp"

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace mlmv {

// Calls fn(begin, end) on contiguous blocks of [0, n). Blocks depend only on n
// and the thread count; callers write to disjoint outputs and reduce in order.
template <class Fn>
void parallel_for(Index n, int threads, Fn&& fn) {
  if (n <= 0) return;
  const Index workers = std::clamp<Index>(threads, 1, n);
  if (workers == 1) {
    fn(Index(0), n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  const Index chunk = (n + workers - 1) / workers;
  for (Index w = 0; w < workers; ++w) {
    const Index begin = w * chunk;
    const Index end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, w, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace mlmv
