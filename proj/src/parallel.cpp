#include "partaff/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <malloc.h>
#include <mutex>
#include <thread>
#include <vector>

namespace partaff {

namespace {
std::atomic<std::size_t> g_threads{1};
}

void set_max_threads(std::size_t n) { g_threads = std::max<std::size_t>(1, n); }

std::size_t max_threads() { return g_threads; }

void retain_freed_memory() {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

void parallel_chunks(std::size_t count, std::size_t chunk,
                     const std::function<void(std::size_t, std::size_t)>& fn) {
    chunk = std::max<std::size_t>(1, chunk);
    const std::size_t chunks = (count + chunk - 1) / chunk;
    const std::size_t workers = std::min(max_threads(), chunks);
    if (workers <= 1) {
        for (std::size_t b = 0; b < count; b += chunk) fn(b, std::min(count, b + chunk));
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&] {
        for (;;) {
            const std::size_t c = next++;
            if (c >= chunks) return;
            try {
                fn(c * chunk, std::min(count, (c + 1) * chunk));
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace partaff
