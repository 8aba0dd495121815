//! Shared inputs for the benchmarks.

use probecount::{CounterSnapshot, ThresholdGrid, TrainingBuffer, TrainingSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A full buffer of random, internally consistent snapshots.
pub fn random_buffer(seed: u64, capacity: usize, grid: &ThresholdGrid) -> TrainingBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buffer = TrainingBuffer::new(capacity);
    for w in 0..capacity {
        let mut snapshot = CounterSnapshot::zeros(grid, w as i64 * 300, 300.0);
        let (mut nv, mut nr) = (rng.random_range(20..80u32), rng.random_range(10..60u32));
        for i in 0..grid.len() {
            snapshot.n_valid[i] = nv;
            snapshot.n_random[i] = nr;
            nv -= rng.random_range(0..=nv.min(3));
            nr -= rng.random_range(0..=nr.min(3));
        }
        buffer.push(TrainingSample { snapshot, truth: rng.random_range(0..60) });
    }
    buffer
}
