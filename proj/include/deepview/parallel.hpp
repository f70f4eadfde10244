#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace deepview {

/// Runs body(begin, end) over `workers` contiguous blocks of [0, count).
/// Each block writes only its own output slots, so results do not depend on
/// scheduling. The first exception thrown by any block is rethrown.
template <typename Body>
void parallel_blocks(std::size_t count, int workers, Body&& body) {
    const std::size_t w = std::clamp<std::size_t>(workers < 1 ? 1 : workers, 1,
                                                   std::max<std::size_t>(count, 1));
    if (w == 1) {
        body(std::size_t{0}, count);
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::jthread> threads;
    threads.reserve(w);
    for (std::size_t t = 0; t < w; ++t) {
        const std::size_t begin = count * t / w;
        const std::size_t end = count * (t + 1) / w;
        threads.emplace_back([&, begin, end] {
            try {
                body(begin, end);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    threads.clear();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace deepview
