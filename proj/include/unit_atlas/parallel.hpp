#pragma once

#include <cstddef>
#include <functional>

namespace uatlas {

// Worker count from an explicit value, else $UNIT_ATLAS_WORKERS, else 1.
std::size_t resolve_workers(std::size_t requested);

// Runs fn(i) for i in [0, n) on up to `workers` threads. Jobs are handed out
// in index order; callers write results into per-index slots so output never
// depends on scheduling. The first exception thrown by a job is rethrown.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace uatlas
