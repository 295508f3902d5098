#pragma once

#include <cstddef>
#include <functional>

namespace compmark {

/// Worker cap: COMPMARK_THREADS if set to a positive integer, otherwise the
/// hardware concurrency.
std::size_t worker_count();

/// Runs fn(0) ... fn(tasks - 1), possibly concurrently. Calls made from inside
/// a worker run serially. The first exception (by task index) is rethrown.
/// Callers keep results bit-stable by writing to per-task slots and merging
/// them in task order.
void parallel_for(std::size_t tasks, const std::function<void(std::size_t)>& fn);

}  // namespace compmark
