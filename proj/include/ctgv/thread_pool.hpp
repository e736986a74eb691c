#pragma once

#include <cstdint>
#include <functional>

namespace ctgv {

// Sets the worker count for parallel_for. 1 (the default) runs everything
// inline. Thread count never changes numeric results: work is split into
// ranges whose outputs are disjoint and every per-element reduction stays
// sequential inside its range.
void set_threads(int n);
int thread_count();

// Runs fn over [begin, end) split into contiguous chunks. Runs inline when
// the range is smaller than grain or only one worker is configured.
void parallel_for(int64_t begin, int64_t end, int64_t grain,
                  const std::function<void(int64_t, int64_t)>& fn);

}  // namespace ctgv
