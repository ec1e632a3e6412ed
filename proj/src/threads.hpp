#pragma once

#include <cstddef>
#include <functional>

namespace despeckler {

// Upper bound on worker threads: DESPECKLER_THREADS when set and positive,
// otherwise the hardware concurrency (at least 1).
std::size_t thread_limit();
void set_thread_limit(std::size_t n);

// Runs fn(i) for i in [0, n). Each index is handled by exactly one worker, so
// results written per index are independent of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace despeckler
