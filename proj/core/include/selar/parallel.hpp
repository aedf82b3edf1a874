#pragma once

#include <cstddef>
#include <functional>

namespace selar {

// Worker count: hardware concurrency, capped by the SELAR_THREADS environment
// variable when set to a positive integer.
std::size_t worker_count();

// Runs fn(i) for i in [0, n) over up to worker_count() threads. Iterations
// must write disjoint state. The first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace selar
