#include "pxst/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace pxst {

namespace {
std::atomic<int> g_threads{0};

int default_threads() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}
}  // namespace

void set_num_threads(int n) { g_threads = n < 1 ? default_threads() : n; }

int num_threads() {
    int n = g_threads.load();
    return n < 1 ? default_threads() : n;
}

int chunk_count(std::ptrdiff_t length) {
    if (length <= 0) return 0;
    return static_cast<int>(std::min<std::ptrdiff_t>(num_threads(), length));
}

void parallel_chunks(std::ptrdiff_t begin, std::ptrdiff_t end,
                     const std::function<void(int, std::ptrdiff_t, std::ptrdiff_t)> &body) {
    const std::ptrdiff_t length = end - begin;
    const int chunks = chunk_count(length);
    if (chunks == 0) return;
    if (chunks == 1) {
        body(0, begin, end);
        return;
    }
    auto bounds = [&](int c) { return begin + length * c / chunks; };

    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> workers;
    workers.reserve(chunks - 1);
    for (int c = 1; c < chunks; ++c) {
        workers.emplace_back([&, c] {
            try {
                body(c, bounds(c), bounds(c + 1));
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        });
    }
    try {
        body(0, bounds(0), bounds(1));
    } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
    }
    for (auto &w : workers) w.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace pxst
