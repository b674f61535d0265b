#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace gridloss {

// Runs fn(i) for i in [0, n) on up to `threads` workers with a static block
// split. Callers write per-index results into preallocated slots and reduce
// them serially in index order afterwards, so the numeric result does not
// depend on the thread count.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    if (threads < 1) threads = 1;
    int workers = threads < n ? threads : n;
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    int chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        int lo = w * chunk;
        int hi = lo + chunk < n ? lo + chunk : n;
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (int i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace gridloss
