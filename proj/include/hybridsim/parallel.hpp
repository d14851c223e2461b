#pragma once

#include <cstddef>
#include <functional>

namespace hybridsim {

// Worker count used by data-parallel loops. 1 selects the deterministic
// single-thread path everywhere.
void set_thread_count(int threads);
int thread_count();

// Splits [0, n) into contiguous chunks, one per worker. Chunk boundaries depend
// only on n and the thread count, so results are reproducible for a fixed count.
void parallel_for(std::size_t n, const std::function<void(std::size_t begin, std::size_t end)>& body);

}  // namespace hybridsim
