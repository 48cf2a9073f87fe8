#pragma once

#include <cstddef>
#include <functional>

namespace dmvfc {

// Process-wide cap on worker threads. 0 means "use hardware concurrency".
void set_thread_count(std::size_t n);
std::size_t thread_count();

// Runs fn(begin, end) over [0, n) split into contiguous blocks, one per
// worker. Block boundaries depend only on n and the thread count, and every
// index is written by exactly one block, so callers that write to
// index-addressed output get results independent of scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

// Keeps freed heap blocks in the process instead of returning large
// allocations to the kernel. Training builds graphs of multi-megabyte
// matrices every step; without this most time goes to page faults.
// No-op outside glibc.
void retain_heap_memory();

}  // namespace dmvfc
