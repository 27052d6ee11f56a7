#pragma once

#include <cstddef>
#include <functional>

namespace unisal {

/// Worker cap: UNISAL_NUM_THREADS when set (a positive integer, else
/// ConfigError), otherwise the hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. Indices are
/// handed out in order; the first exception is rethrown after all workers
/// stop. Gradient recording is disabled inside workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace unisal
