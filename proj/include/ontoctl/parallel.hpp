#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace ontoctl {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Failures are
/// captured per index instead of aborting the batch; the returned vector
/// holds a null pointer for every index that succeeded.
template <class Fn>
std::vector<std::exception_ptr> parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    worker();
    return errors;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return errors;
}

inline std::size_t default_parallelism() { return std::max(1u, std::thread::hardware_concurrency()); }

}  // namespace ontoctl
