// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace igds {

// Worker cap from IGDS_THREADS, else the hardware concurrency (at least 1).
std::size_t thread_cap();

// Calls fn(i) for i in [0, n) on up to `threads` workers. Results must be
// written by index; the lowest-index exception is rethrown after all workers join.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace igds
