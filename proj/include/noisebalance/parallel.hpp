#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace noisebalance {

// Within-run parallelism cap; reads NOISEBALANCE_THREADS, default 1.
inline int configured_threads() {
    const char* env = std::getenv("NOISEBALANCE_THREADS");
    if (!env) return 1;
    const int v = std::atoi(env);
    return v < 1 ? 1 : v;
}

// Runs fn(0..n-1) on up to `threads` workers. Each index is independent;
// results must be written to index-addressed slots so aggregation order stays
// deterministic. The first exception is rethrown on the caller.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    auto worker = [&] {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!err) err = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const int count = std::min(threads, n);
    pool.reserve(static_cast<std::size_t>(count));
    for (int t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

} // namespace noisebalance
