#pragma once

#include <cstddef>
#include <functional>

namespace wa {

/** Number of workers to use: the request if positive, otherwise the hardware concurrency. */
unsigned resolve_threads(int requested);

/**
 * Run body(i) for i in [0, count) on up to `threads` workers.
 * Callers write results into slot i, so the outcome does not depend on scheduling.
 * The first exception thrown by any body is rethrown after all workers join.
 */
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body);

}  // namespace wa
