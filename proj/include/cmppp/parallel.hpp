#pragma once

#include <cstddef>
#include <functional>

namespace cmppp {

/// Worker count: `requested` if positive, else $CMPPP_THREADS if set, else
/// the hardware concurrency (at least 1).
int resolve_threads(int requested = 0);

/// Calls fn(k) for k in [0, n) on up to `threads` workers. Work is assigned
/// by index, so any per-index computation (with its own RNG sub-stream) is
/// independent of the worker count. The first exception thrown is rethrown.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace cmppp
