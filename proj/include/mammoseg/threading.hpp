#pragma once

#include <cstdint>
#include <functional>

namespace mammoseg {

// Worker count resolved from the MAMMOSEG_THREADS environment variable
// (0 or 1 = sequential); falls back to the hardware concurrency.
int worker_threads();

// Static range split across workers. Chunks are disjoint, so parallel kernels
// that only write their own chunk produce bit-identical results for any
// thread count.
void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace mammoseg
