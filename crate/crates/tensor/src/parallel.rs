//! Intra-op parallelism. The worker count is capped by `LDG_THREADS`
//! (default: all available cores). Kernels only split work over disjoint
//! outputs or reduce partial results in a fixed order, so results do not
//! depend on the thread count.

use std::sync::Once;

static INIT: Once = Once::new();

/// Worker cap requested through `LDG_THREADS`, if any.
pub fn requested_threads() -> Option<usize> {
    std::env::var("LDG_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Configures the global pool once; later calls are no-ops.
pub fn init() {
    INIT.call_once(|| {
        if let Some(n) = requested_threads() {
            if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
                log::warn!("global thread pool already initialised; LDG_THREADS={n} ignored");
            }
        }
    });
}

/// Runs `f` on a dedicated pool with exactly `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool")
        .install(f)
}
