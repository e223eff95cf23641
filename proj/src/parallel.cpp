#include "fbsde/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace fbsde {

namespace {
int g_threads = 1;
}

void set_thread_count(int n) { g_threads = std::max(1, n); }

int thread_count() { return g_threads; }

int hardware_thread_count() {
    unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

std::size_t block_count(std::size_t n) {
    return (n + kParallelBlock - 1) / kParallelBlock;
}

void parallel_blocks(std::size_t n,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    const std::size_t nblocks = block_count(n);
    auto run_block = [&](std::size_t b) {
        const std::size_t begin = b * kParallelBlock;
        const std::size_t end = std::min(n, begin + kParallelBlock);
        fn(begin, end, b);
    };
    const int workers = std::min<std::size_t>(g_threads, nblocks);
    if (workers <= 1) {
        for (std::size_t b = 0; b < nblocks; ++b) run_block(b);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t b = next.fetch_add(1); b < nblocks; b = next.fetch_add(1)) run_block(b);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace fbsde
