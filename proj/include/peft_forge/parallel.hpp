#pragma once

#include <cstddef>

namespace peft_forge {

/// Threads used by row-parallel kernels. Defaults to the PEFT_FORGE_THREADS
/// environment variable when set, otherwise to the OpenMP default (1 when
/// built without OpenMP).
int thread_count();
void set_thread_count(int threads);

/// Rows are partitioned statically, so per-row arithmetic is identical for
/// every thread count.
bool parallel_worthwhile(std::size_t work);

}  // namespace peft_forge
