//! Replication fan-out and seed derivation.
//!
//! Replication `i` of a run with master seed `s` always uses
//! `replication_seed(s, i)`, whichever execution path runs it, so the
//! parallel and sequential paths give identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `index`: SplitMix64 applied to `master + (index+1)·φ`.
pub fn replication_seed(master: u64, index: u64) -> u64 {
    mix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Independent sub-stream of a replication seed (environment, episode, ...).
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream.wrapping_add(GOLDEN)))
}

/// Maps `f` over `0..count`, in parallel when the `parallel` feature is on.
/// Output order is always index order.
pub fn map_replications<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_replications_sequential(count, f)
    }
}

/// Always-sequential variant, kept for benchmarking against the parallel path.
pub fn map_replications_sequential<T, F>(count: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..count).map(f).collect()
}
