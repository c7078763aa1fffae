//! Execution-mode control.
//!
//! Batch work is split into fixed blocks whose results are collected in
//! block order, so a reduction over them is deterministic no matter how
//! many threads ran the blocks. With the `parallel` feature (default)
//! blocks run on the rayon pool; without it, or after
//! [`set_sequential`]`(true)`, they run on the current thread. Both
//! paths produce identical bytes.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Forces block work onto the current thread even when the `parallel`
/// feature is enabled. Exists so benchmarks and determinism tests can
/// compare the two paths; results are identical either way.
pub fn set_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::Relaxed);
}

/// True when block work runs on the current thread.
pub fn sequential() -> bool {
    if cfg!(feature = "parallel") {
        FORCE_SEQUENTIAL.load(Ordering::Relaxed)
    } else {
        true
    }
}

/// Runs `f` over `0..blocks` and returns the results in block order.
pub(crate) fn run_blocks<T, F>(blocks: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if !sequential() {
        use rayon::prelude::*;
        return (0..blocks).into_par_iter().map(f).collect();
    }
    (0..blocks).map(f).collect()
}
