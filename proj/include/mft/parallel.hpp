#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace mft {

// Global worker cap. Defaults to hardware concurrency; MFT_THREADS or the
// CLI --threads flag overrides it.
inline int& thread_cap() {
    static int cap = [] {
        if (const char* env = std::getenv("MFT_THREADS")) {
            const int v = std::atoi(env);
            if (v >= 1) return v;
        }
        const unsigned hc = std::thread::hardware_concurrency();
        return hc == 0 ? 1 : static_cast<int>(hc);
    }();
    return cap;
}

inline void set_thread_cap(int n) {
    if (n >= 1) thread_cap() = n;
}

// Runs fn(i) for i in [0, n). Work is claimed by index from a shared counter,
// so results must be written to per-index slots; given that, the output is
// identical for any worker count. Exceptions are captured and rethrown once.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                         int max_threads = -1) {
    if (n == 0) return;
    int nt = max_threads > 0 ? std::min(max_threads, thread_cap()) : thread_cap();
    nt = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(nt), n));
    if (nt <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err = nullptr;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(nt));
    auto body = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n || failed.load()) return;
            try {
                fn(i);
            } catch (...) {
                if (!failed.exchange(true)) err = std::current_exception();
                return;
            }
        }
    };
    for (int t = 0; t < nt; ++t) pool.emplace_back(body);
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

} // namespace mft
