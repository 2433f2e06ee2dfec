#pragma once

#include <cstddef>
#include <functional>

namespace octpad {

// Worker count: OCTPAD_THREADS when set to a positive integer, otherwise the
// hardware concurrency.
int thread_count();

// Runs fn(i) for i in [0, n) on up to thread_count() threads. Each index runs
// exactly once; callers that need deterministic results must write to
// per-index slots and reduce in index order. The first exception thrown by any
// task is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace octpad
