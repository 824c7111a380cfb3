#pragma once

#include <cstddef>
#include <functional>

namespace kmeflow {

/// Runs body(i) for i in [0, count) on up to `threads` workers.
///
/// Each index is processed exactly once and the body must only write state
/// owned by that index, so results never depend on the thread count. The
/// first exception thrown by any body is rethrown on the calling thread after
/// all workers have stopped. threads <= 1 runs inline.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& body);

/// Keeps freed multi-megabyte blocks in the heap instead of returning them to
/// the OS, so the per-step Gram workspaces are not page-faulted in again.
/// Meant to be called once from main(); no-op outside glibc.
void retain_freed_memory() noexcept;

/// Hardware concurrency, at least 1.
[[nodiscard]] unsigned default_thread_count() noexcept;

}  // namespace kmeflow
