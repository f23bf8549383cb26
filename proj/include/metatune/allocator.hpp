#pragma once

#include <cstdlib>  // defines __GLIBC__ on glibc

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace metatune {

#ifdef __GLIBC__
inline constexpr bool kAllocatorTunable = true;
#else
inline constexpr bool kAllocatorTunable = false;
#endif

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// kernel. Training allocates and frees the same large blocks every step.
inline void tune_allocator() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);
#endif
}

}  // namespace metatune
