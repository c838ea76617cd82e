//! File formats, checkpoints, dataset resolution, filter export and the
//! command-line front end around `rotunroll-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod error;
pub mod export;
pub mod formats;
pub mod run;

pub use error::{Error, Result};

/// Keeps freed tensor buffers inside the heap instead of returning them to
/// the kernel. Training allocates and drops the same large buffers every
/// step; with glibc's default thresholds each of those becomes an
/// `mmap`/`munmap` pair plus fresh page faults, which roughly doubles wall
/// time on one core.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator tunables and is called before
    // any thread is spawned.
    unsafe {
        libc::mallopt(libc::M_MMAP_MAX, 0);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}
