#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace stbpu::detail {

// Runs fn(chunk) for chunk in [0, chunks) on a small thread pool. The chunk
// split is fixed by the caller, so results do not depend on the core count.
template <typename Fn>
void parallel_chunks(std::size_t chunks, Fn&& fn)
{
    const std::size_t workers =
        std::min<std::size_t>(chunks, std::max(1u, std::thread::hardware_concurrency()));
    if (workers <= 1) {
        for (std::size_t c = 0; c < chunks; ++c)
            fn(c);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t c = w; c < chunks; c += workers)
                    fn(c);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool)
        t.join();
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

} // namespace stbpu::detail
