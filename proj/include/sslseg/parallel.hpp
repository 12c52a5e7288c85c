#pragma once

#include <functional>

namespace sslseg {

// Worker cap: the SSLSEG_THREADS environment variable when set, otherwise
// min(4, hardware concurrency). Read once per process.
int worker_count();

// Runs fn(0) .. fn(n-1), split across workers. fn must only write state that
// is disjoint per index; under that contract the result is identical for any
// worker count. The first exception thrown by any index is rethrown here.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace sslseg
