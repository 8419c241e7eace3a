#pragma once

#include <cstddef>
#include <functional>

namespace pvgc {

/// Worker cap from PVGC_THREADS (default 1).
std::size_t worker_count();

/// Runs fn(begin, end) over a static partition of [0, n). Each index is
/// handled by exactly one worker, so results written per index do not depend
/// on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace pvgc
