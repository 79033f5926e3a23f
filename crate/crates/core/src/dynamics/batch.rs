// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Seeded batches of independent trajectories.
//!
//! Trajectory `i` of a batch with base seed `seed0` uses
//!
//! ```text
//! seed_i = splitmix64(seed0 XOR i)
//! ```
//!
//! where `splitmix64` is the SplitMix64 output function (Steele, Lea & Flood):
//!
//! ```text
//! z = x + 0x9E3779B97F4A7C15          (wrapping)
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! return z ^ (z >> 31)
//! ```
//!
//! The mix is a bijection of `u64`, so seeds within one batch never collide,
//! and each seed initialises an independent ChaCha8 stream.

use rayon::prelude::*;

use super::trajectory::{Trajectory, TrajectoryOptions, TrajectorySimulator};
use crate::error::{Error, Result};
use crate::linalg::CVector;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seed_for(seed0: u64, index: u64) -> u64 {
    splitmix64(seed0 ^ index)
}

/// Run `n_traj` trajectories on up to `jobs` threads. The output is ordered by
/// trajectory index regardless of completion order.
pub fn run_batch(
    sim: &TrajectorySimulator,
    psi0: &CVector,
    t_end: f64,
    n_traj: usize,
    seed0: u64,
    jobs: usize,
    opts: &TrajectoryOptions,
) -> Result<Vec<Trajectory>> {
    par_map(jobs, n_traj, |i| sim.run(psi0, t_end, seed_for(seed0, i as u64), opts))
}

/// Evaluate `f(0..n)` on up to `jobs` threads, results ordered by index.
pub fn par_map<T, F>(jobs: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if jobs <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atom::AtomModel;
    use crate::linalg::basis;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference SplitMix64 generator seeded with 0.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(0x9E37_79B9_7F4A_7C15), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn seeds_are_distinct_within_batch() {
        let mut seeds: Vec<u64> = (0..10_000).map(|i| seed_for(12345, i)).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 10_000);
    }

    #[test]
    fn batch_is_independent_of_thread_count() {
        let sim = TrajectorySimulator::new(&AtomModel::two_level(3.0, 1.0, 0.0)).unwrap();
        let opts = TrajectoryOptions::default();
        let a = run_batch(&sim, &basis(2, 0), 30.0, 16, 7, 1, &opts).unwrap();
        let b = run_batch(&sim, &basis(2, 0), 30.0, 16, 7, 4, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[3].seed, seed_for(7, 3));
    }
}
