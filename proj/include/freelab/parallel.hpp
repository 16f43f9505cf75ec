#pragma once

#include <cstddef>
#include <functional>

namespace freelab {

/// Worker count used by parallel_for. Never affects results: callers write
/// per-index slots and reduce them in index order.
int worker_threads();
void set_worker_threads(int threads);

/// Calls fn(i) for every i in [0, count), fanned out over worker_threads().
/// The first exception thrown by any call is rethrown after all workers join.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace freelab
