#pragma once

#include <cstddef>
#include <functional>

namespace ptq {

// Global worker count for parallel loops. 0 restores the hardware default.
// Results never depend on the configured count: every output element is
// computed by exactly one worker with a fixed reduction order.
void set_thread_count(int n);
int thread_count();

// Runs body(begin, end) over disjoint contiguous chunks of [0, n).
void parallel_for(size_t n, const std::function<void(size_t, size_t)> & body);

} // namespace ptq
