#pragma once

#include <cstddef>
#include <functional>

namespace partaff {

/// Caps the worker count used by forward-only rendering (default 1).
void set_max_threads(std::size_t n);
std::size_t max_threads();

/// Keeps freed large tensor buffers in the heap instead of returning them
/// to the OS, so per-step allocations stop page-faulting. Process-wide;
/// call once at start-up.
void retain_freed_memory();

/// Runs fn(begin, end) over contiguous chunks of [0, count). Chunks write
/// to disjoint outputs, so results do not depend on the thread count.
void parallel_chunks(std::size_t count, std::size_t chunk,
                     const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace partaff
