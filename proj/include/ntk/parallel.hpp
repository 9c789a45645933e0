#pragma once

#include <cstddef>
#include <functional>

namespace ntk {

// Global worker cap used by every parallel loop. 0 or 1 means serial.
void set_thread_count(int n);
int thread_count();

// Runs body(i) for i in [0, n). Indices are split into contiguous blocks, one
// per worker, so results written by index do not depend on the thread count.
// The first exception thrown by any worker is rethrown after all join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace ntk
