#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace heliofit::detail {

inline unsigned worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Calls body(i) for i in [0, n), splitting contiguous blocks across
/// threads. Each index runs exactly once, so write-disjoint bodies produce
/// identical results regardless of the thread count.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
  const std::size_t workers = std::min<std::size_t>(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&body, begin, end] {
      for (std::size_t i = begin; i < end; ++i) body(i);
    });
  }
}

}  // namespace heliofit::detail
