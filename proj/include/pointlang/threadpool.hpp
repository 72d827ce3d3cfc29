#pragma once

#include <cstddef>
#include <functional>

namespace pointlang {

// Number of worker threads for dense kernels. Reads POINTLANG_THREADS once;
// defaults to the hardware concurrency, capped at 16.
int thread_count();

// Runs fn(begin, end) over a static contiguous partition of [0, n).
// Each index is processed by exactly one worker, so any computation whose
// per-index result is accumulated sequentially inside fn is bit-identical
// regardless of the thread count. Small ranges run inline.
void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace pointlang
