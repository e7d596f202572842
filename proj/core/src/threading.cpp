#include "ptq/threading.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace ptq {

namespace {
std::atomic<int> g_threads{0};

int resolve(int configured) {
    if (configured > 0) {
        return configured;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}
} // namespace

void set_thread_count(int n) {
    g_threads.store(n > 0 ? n : 0);
}

int thread_count() {
    return resolve(g_threads.load());
}

void parallel_for(size_t n, const std::function<void(size_t, size_t)> & body) {
    if (n == 0) {
        return;
    }
    size_t workers = static_cast<size_t>(thread_count());
    workers = std::min(workers, n);
    if (workers <= 1) {
        body(0, n);
        return;
    }
    size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t w = 0; w < workers; ++w) {
        size_t begin = w * chunk;
        size_t end   = std::min(begin + chunk, n);
        if (begin >= end) {
            break;
        }
        pool.emplace_back([&body, begin, end] { body(begin, end); });
    }
    for (auto & t : pool) {
        t.join();
    }
}

} // namespace ptq
