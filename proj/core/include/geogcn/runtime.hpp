#pragma once

namespace geogcn {

/// Keeps large freed blocks on the heap instead of returning them to the OS.
/// Training allocates and frees multi-megabyte activations per patch; with the
/// default glibc thresholds every one of them is a fresh mmap plus page faults.
/// No-op on other C libraries. Call once at program start.
void configure_allocator();

}  // namespace geogcn
