#pragma once

#include <cstdint>
#include <functional>

namespace rifcn {

/// Worker budget for internal parallelism. Reads RIFCN_THREADS once on first
/// use; 0 or 1 selects the sequential path, unset falls back to the hardware
/// concurrency. Every parallel loop in the library assigns disjoint output
/// ranges to workers, so results are bit-identical for any budget.
int thread_budget();

/// Runs fn(begin, end) over contiguous chunks covering [0, count). Chunks may
/// execute on separate threads; the call returns after all complete. Work
/// smaller than min_grain per task stays on the calling thread.
void parallel_for(std::int64_t count,
                  const std::function<void(std::int64_t, std::int64_t)>& fn,
                  std::int64_t min_grain = 1);

} // namespace rifcn
