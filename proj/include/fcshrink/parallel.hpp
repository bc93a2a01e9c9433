#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace fcshrink {

/// Runs body(i) for i in [0, n) on up to `threads` workers. Indices are
/// assigned in contiguous blocks; callers write results into per-index slots
/// so output never depends on scheduling. If several items throw, the
/// exception from the lowest index is rethrown.
template <typename Body>
void parallel_for(std::size_t n, std::size_t threads, Body&& body) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::size_t> failed_at(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(n, begin + chunk);
            for (std::size_t i = begin; i < end; ++i) {
                try {
                    body(i);
                } catch (...) {
                    errors[w] = std::current_exception();
                    failed_at[w] = i;
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    std::size_t first = threads;
    for (std::size_t w = 0; w < threads; ++w) {
        if (errors[w] && (first == threads || failed_at[w] < failed_at[first])) first = w;
    }
    if (first != threads) std::rethrow_exception(errors[first]);
}

}  // namespace fcshrink
