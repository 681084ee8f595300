#pragma once

#include <cstddef>
#include <functional>

namespace cvp {

/// Worker count: CONTEXTVP_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

/// Runs body(i) for i in [0, n) on up to `workers` threads. Each index runs
/// exactly once; callers own any cross-index reduction order.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& body);

}  // namespace cvp
