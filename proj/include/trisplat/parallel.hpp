#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace ts {

// Global worker count for data-parallel passes. 1 = fully serial. Results are
// identical for any value: workers own disjoint output regions and reductions
// always merge per-chunk partials in chunk order.
inline int& worker_threads() {
    static int n = 1;
    return n;
}

inline void set_worker_threads(int n) { worker_threads() = n < 1 ? 1 : n; }

// Runs fn(chunk_index) for chunk_index in [0, num_chunks). Dynamic scheduling
// over an atomic counter; fn must only write chunk-local state.
inline void parallel_for_chunks(int num_chunks, const std::function<void(int)>& fn) {
    int nthreads = std::min(worker_threads(), num_chunks);
    if (nthreads <= 1) {
        for (int i = 0; i < num_chunks; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (int t = 0; t < nthreads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                int i = next.fetch_add(1, std::memory_order_relaxed);
                if (i >= num_chunks) break;
                fn(i);
            }
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace ts
