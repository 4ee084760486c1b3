#include "mammoseg/threading.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace mammoseg {

int worker_threads() {
  static const int n = [] {
    if (const char* env = std::getenv("MAMMOSEG_THREADS")) {
      int v = std::atoi(env);
      return std::max(1, v);  // 0 means sequential
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
  }();
  return n;
}

void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t, std::int64_t)>& body) {
  const std::int64_t n = end - begin;
  if (n <= 0) return;
  const int workers = std::min<std::int64_t>(worker_threads(), n);
  if (workers <= 1) {
    body(begin, end);
    return;
  }
  const std::int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  for (int w = 1; w < workers; ++w) {
    std::int64_t b = begin + w * chunk;
    std::int64_t e = std::min(end, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&body, b, e] { body(b, e); });
  }
  body(begin, std::min(end, begin + chunk));
  for (auto& t : pool) t.join();
}

}  // namespace mammoseg
