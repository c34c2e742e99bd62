#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace mmreg {

/// Worker count used by every parallel loop in the library. Results never
/// depend on this value: loops write disjoint outputs and reductions are
/// summed in index order.
void set_num_threads(int n);
int num_threads();

/// Runs fn(i) for i in [0, n), split into contiguous ranges over the workers.
template <typename Fn>
void parallel_for(int n, Fn&& fn)
{
    const int workers = std::min(num_threads(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        const int begin = static_cast<int>(static_cast<long long>(n) * w / workers);
        const int end = static_cast<int>(static_cast<long long>(n) * (w + 1) / workers);
        pool.emplace_back([&, w, begin, end] {
            try {
                for (int i = begin; i < end; ++i) fn(i);
            }
            catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

/// Sum of fn(i) over [0, n). Partials are stored per index and added
/// sequentially, so the result is bit-identical for any thread count.
template <typename Fn>
double parallel_sum(int n, Fn&& fn)
{
    std::vector<double> partial(static_cast<std::size_t>(n), 0.0);
    parallel_for(n, [&](int i) { partial[static_cast<std::size_t>(i)] = fn(i); });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

} // namespace mmreg
