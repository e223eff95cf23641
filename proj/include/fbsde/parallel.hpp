#pragma once

#include <cstddef>
#include <functional>

namespace fbsde {

// Global worker count used by parallel_blocks. 1 disables threading.
void set_thread_count(int n);
int thread_count();
int hardware_thread_count();

// Runs fn(begin, end, block_index) over [0, n) in fixed-size blocks.
// Block boundaries do not depend on the thread count, and callers that
// reduce must combine per-block partials in block-index order, so results
// are bit-identical for any thread count.
inline constexpr std::size_t kParallelBlock = 4096;

std::size_t block_count(std::size_t n);

void parallel_blocks(std::size_t n,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

}  // namespace fbsde
