#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mn {

/// Number of worker threads used by the pairwise metric kernels. 0 means hardware concurrency.
inline std::size_t &metric_threads() {
    static std::size_t n = 0;
    return n;
}

inline std::size_t resolve_threads(std::size_t requested) {
    if (requested == 0) requested = std::max(1u, std::thread::hardware_concurrency());
    return requested;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Indices are claimed dynamically;
/// callers that need a deterministic result must write per-index outputs and reduce afterwards.
/// The first exception thrown by any fn is rethrown on the calling thread.
template <class Fn>
void parallel_for(std::size_t n, Fn &&fn, std::size_t threads = 0) {
    threads = std::min(resolve_threads(threads), n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                next.store(n);
                return;
            }
        }
    };
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    pool.clear();
    if (failure) std::rethrow_exception(failure);
}

/// Sum whose result does not depend on the order of `values`: the values are sorted first.
/// Used so that corpus metrics are exactly invariant under reordering of the responses.
inline double order_independent_sum(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    double total = 0.0;
    for (double v : values) total += v;
    return total;
}

/// pair(i, j) for every unordered pair i<j, rows filled in parallel. Row-major order.
template <class PairFn>
std::vector<double> pairwise_values(std::size_t n, PairFn &&pair) {
    std::vector<double> out(n < 2 ? 0 : n * (n - 1) / 2);
    parallel_for(
        n,
        [&](std::size_t i) {
            std::size_t offset = i * n - i * (i + 1) / 2;
            for (std::size_t j = i + 1; j < n; ++j) out[offset + (j - i - 1)] = pair(i, j);
        },
        metric_threads());
    return out;
}

} // namespace mn
