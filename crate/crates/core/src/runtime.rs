//! Process-level setup for long training and benchmark runs.

/// Keeps freed heap memory mapped instead of returning it to the OS, so
/// the activation buffers of one step are reused by the next rather than
/// page-faulted in again. Returns `false` on non-glibc targets.
pub fn retain_freed_memory() -> bool {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        // 32 MiB is the largest mmap threshold glibc accepts on 64-bit.
        // SAFETY: mallopt only adjusts allocator parameters.
        unsafe { libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20) == 1 && libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX) == 1 }
    }
    #[cfg(not(all(target_os = "linux", target_env = "gnu")))]
    {
        false
    }
}
