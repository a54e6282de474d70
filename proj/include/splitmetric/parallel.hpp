#pragma once

#include <cstddef>
#include <functional>

namespace splitmetric {

/// Worker cap used by data-parallel loops. 0 means "not set": falls back to
/// SPLITMETRIC_THREADS, then to the hardware concurrency.
void set_thread_limit(unsigned threads);
unsigned thread_limit();

/// Runs body(i) for i in [0, n) across up to thread_limit() workers. Each
/// index is visited exactly once; body must only write state owned by i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace splitmetric
