#pragma once

#include <cstddef>
#include <functional>

namespace csnn {

// Process-wide worker count used by parallel_for. Defaults to the number of
// hardware threads. Results never depend on this value: work is split over
// independent indices and every reduction runs afterwards in index order.
void set_workers(std::size_t n);
std::size_t workers();

// Calls fn(i) for i in [0, n), statically chunked over workers().
// The first exception thrown by any worker is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace csnn
