#pragma once

// Index-parallel loop over std::thread. Each index writes only its own
// slot, so results do not depend on scheduling. Nested calls run serially.

#include <cstddef>
#include <functional>

namespace abc_hmm {

/// Worker count from ABC_HMM_THREADS (unset or 0 means hardware concurrency).
std::size_t default_thread_count();

/// Calls body(i) for i in [0, n) on up to `threads` workers (0 = default).
/// The first exception thrown by any body is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body, std::size_t threads = 0);

}  // namespace abc_hmm
