#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace pk {

/// Worker cap: PARAKERNEL_THREADS if set, else hardware parallelism.
inline int thread_cap() {
    static const int cap = [] {
        if (const char* env = std::getenv("PARAKERNEL_THREADS")) {
            int k = std::atoi(env);
            if (k >= 1) return k;
        }
        unsigned hc = std::thread::hardware_concurrency();
        return hc == 0 ? 1 : static_cast<int>(hc);
    }();
    return cap;
}

/// Runs fn(i) for i in [0, count) across worker threads. Work is split into
/// contiguous chunks by index so that any per-index output slots are written
/// deterministically; fn must not touch shared mutable state outside its slot.
inline void parallel_for(std::int64_t count, const std::function<void(std::int64_t)>& fn) {
    int workers = static_cast<int>(std::min<std::int64_t>(thread_cap(), count));
    if (workers <= 1) {
        for (std::int64_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    std::int64_t chunk = (count + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        std::int64_t lo = w * chunk;
        std::int64_t hi = std::min<std::int64_t>(count, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace pk
