#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace odtmpc::detail {

/// Runs fn(begin, end, worker) over `jobs` contiguous slices of [0, count).
/// The first exception thrown by any worker is rethrown on the caller.
template <typename Fn>
void parallel_slices(std::size_t count, int jobs, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || count < 2) {
    fn(std::size_t{0}, count, 0);
    return;
  }
  const std::size_t used = std::min(workers, count);
  std::vector<std::exception_ptr> errors(used);
  std::vector<std::thread> threads;
  threads.reserve(used);
  for (std::size_t w = 0; w < used; ++w) {
    const std::size_t begin = count * w / used;
    const std::size_t end = count * (w + 1) / used;
    threads.emplace_back([&, begin, end, w] {
      try {
        fn(begin, end, static_cast<int>(w));
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace odtmpc::detail
