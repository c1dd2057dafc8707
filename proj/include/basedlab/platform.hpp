// Copyright 2026 The basedlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace basedlab {

// Training allocates and frees many mid-sized buffers per step; glibc's
// default dynamic mmap threshold turns each into an mmap/munmap pair. Pin the
// threshold high and stop trimming the heap. No-op elsewhere.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace basedlab
