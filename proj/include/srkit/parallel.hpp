#pragma once

#include <cstdint>
#include <functional>

#include "srkit/tensor.hpp"

namespace srkit {

// Data-parallel loop over [begin, end). Each index is processed entirely by
// one worker, so the result is bitwise independent of the worker count as
// long as the per-index work has a fixed internal order.
//
// Pool size: SRKIT_THREADS env var if set, otherwise hardware concurrency.
void parallel_for(Index begin, Index end, const std::function<void(Index)>& fn);

void set_thread_count(int n);
int thread_count();

}  // namespace srkit
