//! Linear occupancy model and its brute-force calibration.
//!
//! The estimate for a window is `alpha * n_valid[θ] + beta * n_random[θ]`.
//! Calibration sweeps every (θ, α, β) grid point and keeps the one with the
//! smallest mean squared error against the ground-truth counts in the
//! training buffer.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::counter::{CounterSnapshot, ThresholdGrid};

pub const DEFAULT_BUFFER_CAPACITY: usize = 40;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimatorError {
    #[error("training buffer is empty")]
    EmptyBuffer,
    #[error("incompatible threshold grid: {0}")]
    IncompatibleGrid(String),
    #[error("search grid has no alpha or beta values")]
    EmptySearchGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub beta: f64,
    /// Zero-based index into the threshold grid.
    pub theta_index: usize,
    pub theta_dbm: f64,
}

impl ModelParams {
    pub fn new(alpha: f64, beta: f64, grid: &ThresholdGrid, theta_index: usize) -> Result<Self, EstimatorError> {
        let theta_dbm = grid.get(theta_index).ok_or_else(|| {
            EstimatorError::IncompatibleGrid(format!("theta index {theta_index} outside a {}-threshold grid", grid.len()))
        })?;
        Ok(Self { alpha, beta, theta_index, theta_dbm })
    }

    /// alpha 1.0, beta 0.1, threshold nearest -80 dBm.
    pub fn cold_start(grid: &ThresholdGrid) -> Self {
        let theta_index = grid.nearest_index(-80.0);
        Self {
            alpha: 1.0,
            beta: 0.1,
            theta_index,
            theta_dbm: grid.values()[theta_index],
        }
    }

    fn counts(&self, snapshot: &CounterSnapshot) -> Result<(u32, u32), EstimatorError> {
        match snapshot.thresholds.get(self.theta_index) {
            Some(&t) if t == self.theta_dbm => Ok((
                snapshot.n_valid[self.theta_index],
                snapshot.n_random[self.theta_index],
            )),
            Some(&t) => Err(EstimatorError::IncompatibleGrid(format!(
                "threshold {} is {t} dBm in the snapshot but {} dBm in the model",
                self.theta_index, self.theta_dbm
            ))),
            None => Err(EstimatorError::IncompatibleGrid(format!(
                "theta index {} outside a {}-threshold snapshot",
                self.theta_index,
                snapshot.len()
            ))),
        }
    }
}

/// Raw (unrounded) occupancy estimate for one window.
pub fn estimate(params: &ModelParams, snapshot: &CounterSnapshot) -> Result<f64, EstimatorError> {
    let (nv, nr) = params.counts(snapshot)?;
    Ok(params.alpha * nv as f64 + params.beta * nr as f64)
}

/// Display form of an estimate: nearest non-negative integer.
pub fn round_estimate(raw: f64) -> u32 {
    raw.round().max(0.0) as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub snapshot: CounterSnapshot,
    pub truth: u32,
}

/// Fixed-capacity FIFO of training samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBuffer {
    samples: VecDeque<TrainingSample>,
    capacity: usize,
}

impl TrainingBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "training buffer capacity must be positive");
        Self { samples: VecDeque::with_capacity(capacity), capacity }
    }

    /// Append `sample`, evicting and returning the oldest one when full.
    pub fn push(&mut self, sample: TrainingSample) -> Option<TrainingSample> {
        let evicted = if self.samples.len() == self.capacity {
            self.samples.pop_front()
        } else {
            None
        };
        self.samples.push_back(sample);
        evicted
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl ExactSizeIterator<Item = &TrainingSample> {
        self.samples.iter()
    }
}

impl Default for TrainingBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_BUFFER_CAPACITY)
    }
}

impl<'a> IntoIterator for &'a TrainingBuffer {
    type Item = &'a TrainingSample;
    type IntoIter = std::collections::vec_deque::Iter<'a, TrainingSample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

/// Candidate correction factors; every threshold of the snapshots' grid is searched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub alpha_values: Vec<f64>,
    pub beta_values: Vec<f64>,
}

impl SearchGrid {
    /// `lo/10, (lo+1)/10, ..., hi/10` for both factors.
    pub fn tenths(lo: u32, hi: u32) -> Self {
        let values: Vec<f64> = (lo..=hi).map(|k| k as f64 / 10.0).collect();
        Self { alpha_values: values.clone(), beta_values: values }
    }

    pub fn combinations(&self, thresholds: usize) -> usize {
        self.alpha_values.len() * self.beta_values.len() * thresholds
    }
}

impl Default for SearchGrid {
    /// 0.1 to 2.0 in steps of 0.1.
    fn default() -> Self {
        Self::tenths(1, 20)
    }
}

/// Calibrated parameters and their training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub params: ModelParams,
    pub mse: f64,
}

fn shared_thresholds<'a, I>(samples: I) -> Result<(Vec<&'a TrainingSample>, &'a [f64]), EstimatorError>
where
    I: IntoIterator<Item = &'a TrainingSample>,
{
    let samples: Vec<&TrainingSample> = samples.into_iter().collect();
    let first = samples.first().ok_or(EstimatorError::EmptyBuffer)?;
    let thresholds = first.snapshot.thresholds.as_slice();
    for s in &samples {
        if s.snapshot.thresholds != thresholds || !s.snapshot.is_consistent() {
            return Err(EstimatorError::IncompatibleGrid(format!(
                "sample for window {} does not share the buffer's threshold grid",
                s.snapshot.window_start
            )));
        }
    }
    Ok((samples, thresholds))
}

/// Mean squared error of `params` over the samples.
pub fn objective<'a, I>(params: &ModelParams, samples: I) -> Result<f64, EstimatorError>
where
    I: IntoIterator<Item = &'a TrainingSample>,
{
    let mut sse = 0.0;
    let mut n = 0usize;
    for s in samples {
        let (nv, nr) = params.counts(&s.snapshot)?;
        let r = params.alpha * nv as f64 + params.beta * nr as f64 - s.truth as f64;
        sse += r * r;
        n += 1;
    }
    if n == 0 {
        return Err(EstimatorError::EmptyBuffer);
    }
    Ok(sse / n as f64)
}

/// Exhaustive search for the parameters minimizing [`objective`].
///
/// Ties go to the smallest threshold index, then the smallest alpha, then
/// the smallest beta (grid order).
pub fn train<'a, I>(samples: I, grid: &SearchGrid) -> Result<Fit, EstimatorError>
where
    I: IntoIterator<Item = &'a TrainingSample>,
{
    if grid.alpha_values.is_empty() || grid.beta_values.is_empty() {
        return Err(EstimatorError::EmptySearchGrid);
    }
    let (samples, thresholds) = shared_thresholds(samples)?;
    let t = samples.len();
    let truths: Vec<f64> = samples.iter().map(|s| s.truth as f64).collect();

    // Column-major counts: cols[i][k] = (n_valid, n_random) of sample k at threshold i.
    let cols: Vec<Vec<(f64, f64)>> = (0..thresholds.len())
        .map(|i| {
            samples
                .iter()
                .map(|s| (s.snapshot.n_valid[i] as f64, s.snapshot.n_random[i] as f64))
                .collect()
        })
        .collect();

    let mut best: Option<(f64, usize, f64, f64)> = None;
    for (theta_index, col) in cols.iter().enumerate() {
        for &alpha in &grid.alpha_values {
            for &beta in &grid.beta_values {
                let mut sse = 0.0;
                for (&(nv, nr), &y) in col.iter().zip(&truths) {
                    let r = alpha * nv + beta * nr - y;
                    sse += r * r;
                }
                let mse = sse / t as f64;
                if best.is_none_or(|(b, ..)| mse < b) {
                    best = Some((mse, theta_index, alpha, beta));
                }
            }
        }
    }
    let (mse, theta_index, alpha, beta) = best.expect("non-empty search");
    Ok(Fit {
        params: ModelParams { alpha, beta, theta_index, theta_dbm: thresholds[theta_index] },
        mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(grid: &ThresholdGrid, n_valid: Vec<u32>, n_random: Vec<u32>) -> CounterSnapshot {
        CounterSnapshot {
            window_start: 0,
            window_duration_s: 300.0,
            thresholds: grid.values().to_vec(),
            n_valid,
            n_random,
        }
    }

    fn flat(grid: &ThresholdGrid, nv: u32, nr: u32) -> CounterSnapshot {
        snap(grid, vec![nv; grid.len()], vec![nr; grid.len()])
    }

    #[test]
    fn estimate_examples() {
        let grid = ThresholdGrid::default();
        let p = ModelParams::new(1.0, 0.1, &grid, 10).unwrap();
        assert_eq!(estimate(&p, &flat(&grid, 7, 0)).unwrap(), 7.0);
        let p = ModelParams::new(0.54, 0.05, &grid, 10).unwrap();
        assert!((estimate(&p, &flat(&grid, 20, 10)).unwrap() - 11.3).abs() < 1e-12);
        assert_eq!(estimate(&p, &flat(&grid, 0, 0)).unwrap(), 0.0);
    }

    #[test]
    fn estimate_is_linear() {
        let grid = ThresholdGrid::default();
        let p = ModelParams::new(1.3, 0.7, &grid, 3).unwrap();
        let one = estimate(&p, &flat(&grid, 6, 11)).unwrap();
        let two = estimate(&p, &flat(&grid, 12, 22)).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-12);
    }

    #[test]
    fn estimate_grid_mismatch() {
        let grid = ThresholdGrid::default();
        let other = ThresholdGrid::evenly_spaced();
        let p = ModelParams::new(1.0, 1.0, &grid, 5).unwrap();
        assert!(matches!(estimate(&p, &flat(&other, 1, 1)), Err(EstimatorError::IncompatibleGrid(_))));
        let short = ThresholdGrid::stepped(-120.0, 2.0, 3).unwrap();
        assert!(matches!(estimate(&p, &flat(&short, 1, 1)), Err(EstimatorError::IncompatibleGrid(_))));
        assert!(ModelParams::new(1.0, 1.0, &short, 3).is_err());
    }

    #[test]
    fn objective_examples() {
        let grid = ThresholdGrid::default();
        let p = ModelParams::new(1.0, 0.1, &grid, 0).unwrap();
        let exact = [TrainingSample { snapshot: flat(&grid, 7, 0), truth: 7 }];
        assert_eq!(objective(&p, &exact).unwrap(), 0.0);
        let off = [TrainingSample { snapshot: flat(&grid, 5, 0), truth: 7 }];
        assert_eq!(objective(&p, &off).unwrap(), 4.0);
        let two = [
            TrainingSample { snapshot: flat(&grid, 5, 0), truth: 4 },
            TrainingSample { snapshot: flat(&grid, 5, 0), truth: 8 },
        ];
        assert_eq!(objective(&p, &two).unwrap(), 5.0);
        assert_eq!(objective(&p, &[]), Err(EstimatorError::EmptyBuffer));
    }

    #[test]
    fn train_on_empty_buffer() {
        assert_eq!(train(&TrainingBuffer::default(), &SearchGrid::default()), Err(EstimatorError::EmptyBuffer));
    }

    #[test]
    fn train_single_sample_tie_breaks() {
        // n_valid is 10 from threshold index 5 upward, 12 below it
        let grid = ThresholdGrid::default();
        let nv: Vec<u32> = (0..40).map(|i| if i < 5 { 12 } else { 10 }).collect();
        let s = TrainingSample { snapshot: snap(&grid, nv, vec![0; 40]), truth: 5 };
        let fit = train([&s], &SearchGrid::default()).unwrap();
        // 12 * alpha = 5 has no grid solution, 10 * 0.5 = 5 does
        assert_eq!(fit.params.theta_index, 5);
        assert_eq!(fit.params.alpha, 0.5);
        assert_eq!(fit.params.beta, 0.1);
        assert_eq!(fit.mse, 0.0);
    }

    #[test]
    fn fifo_eviction() {
        let grid = ThresholdGrid::default();
        let mut buf = TrainingBuffer::new(40);
        assert!(buf.push(TrainingSample { snapshot: flat(&grid, 0, 0), truth: 0 }).is_none());
        assert_eq!(buf.len(), 1);
        for truth in 1..=40 {
            let evicted = buf.push(TrainingSample { snapshot: flat(&grid, 0, 0), truth });
            assert_eq!(evicted.map(|s| s.truth), (truth == 40).then_some(0));
        }
        assert_eq!(buf.len(), 40);
        let order: Vec<u32> = buf.iter().map(|s| s.truth).collect();
        assert_eq!(order, (1..=40).collect::<Vec<_>>());
    }

    #[test]
    fn default_search_grid_size() {
        let g = SearchGrid::default();
        assert_eq!(g.alpha_values.len(), 20);
        assert_eq!(g.alpha_values[0], 0.1);
        assert_eq!(g.alpha_values[19], 2.0);
        assert_eq!(g.alpha_values[12], 1.3);
        assert_eq!(g.combinations(40), 16000);
    }

    #[test]
    fn cold_start_params() {
        let p = ModelParams::cold_start(&ThresholdGrid::default());
        assert_eq!((p.alpha, p.beta, p.theta_dbm), (1.0, 0.1, -80.0));
    }

    #[test]
    fn rounding_for_display() {
        assert_eq!(round_estimate(11.3), 11);
        assert_eq!(round_estimate(11.5), 12);
        assert_eq!(round_estimate(-0.4), 0);
    }
}
