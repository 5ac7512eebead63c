//! Worker-pool setup.
//!
//! All parallel sections write disjoint output slices and reduce in a fixed
//! order, so results are bit-identical for any thread count. `PTYCH_THREADS`
//! caps the pool size.

/// Initializes the global rayon pool from the `PTYCH_THREADS` environment
/// variable. Safe to call more than once; later calls are no-ops.
pub fn init_pool_from_env() {
    if let Ok(v) = std::env::var("PTYCH_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                // Errors only if a global pool already exists.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
