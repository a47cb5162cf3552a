#pragma once

#include <cstddef>
#include <functional>

namespace stpformer {

// Worker cap. First call reads STPFORMER_THREADS (falls back to the hardware
// count); set_max_threads overrides it for the process.
int max_threads();
void set_max_threads(int n);

// Runs body(begin, end) over a static partition of [0, n). Falls back to a
// single inline call when n < min_parallel or only one worker is allowed.
// Each index is processed by exactly one worker, so results are bitwise
// independent of the thread count as long as body writes disjoint outputs.
void parallel_for(std::size_t n, std::size_t min_parallel,
                  const std::function<void(std::size_t, std::size_t)>& body);

} // namespace stpformer
