#pragma once

#include <cstddef>
#include <functional>

namespace scfa {

// Worker count used by every kernel. Resolution order: set_worker_count(),
// then the SCFA_WORKERS environment variable, then hardware concurrency.
std::size_t worker_count();
void set_worker_count(std::size_t workers);  // 0 restores the default

// Runs fn(i) for i in [0, n). Each index is handled by exactly one worker,
// so callers that write only to index-owned regions get results that do not
// depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace scfa
