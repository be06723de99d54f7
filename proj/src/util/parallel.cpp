#include "cryoforge/util/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace cryoforge {

int worker_count() {
    int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (const char* cap = std::getenv("CRYOFORGE_THREADS")) {
        try {
            const int limit = std::stoi(cap);
            if (limit >= 1)
                n = std::min(n, limit);
        } catch (const std::exception&) {
        }
    }
    return n;
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
    const auto workers = std::min<std::int64_t>(worker_count(), n);
    if (workers <= 1) {
        for (std::int64_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::exception_ptr error;
    std::mutex guard;
    std::vector<std::thread> pool;
    for (std::int64_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            const auto begin = n * w / workers, end = n * (w + 1) / workers;
            try {
                for (auto i = begin; i < end; ++i)
                    fn(i);
            } catch (...) {
                const std::lock_guard lock(guard);
                if (!error)
                    error = std::current_exception();
            }
        });
    for (auto& t : pool)
        t.join();
    if (error)
        std::rethrow_exception(error);
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

} // namespace cryoforge
