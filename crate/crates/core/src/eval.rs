//! Train/test evaluation: RMSE, MAE and percentage error against room capacity.

use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::estimator::{estimate, round_estimate, train, EstimatorError, ModelParams, SearchGrid, TrainingSample};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("predictions ({predictions}) and truths ({truths}) differ in length")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("no values to score")]
    Empty,
    #[error("dataset has {size} samples; need more than the training size {train_size}")]
    DatasetTooSmall { size: usize, train_size: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

fn residuals<'a>(predictions: &'a [f64], truths: &'a [f64]) -> Result<impl Iterator<Item = f64> + 'a, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch { predictions: predictions.len(), truths: truths.len() });
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(predictions.iter().zip(truths).map(|(p, t)| p - t))
}

pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64, EvalError> {
    let n = predictions.len() as f64;
    Ok((residuals(predictions, truths)?.map(|r| r * r).sum::<f64>() / n).sqrt())
}

pub fn mae(predictions: &[f64], truths: &[f64]) -> Result<f64, EvalError> {
    let n = predictions.len() as f64;
    Ok(residuals(predictions, truths)?.map(f64::abs).sum::<f64>() / n)
}

/// MAE as a percentage of the room's seat count.
pub fn percentage_error(mae_value: f64, seats: u32) -> f64 {
    100.0 * mae_value / seats as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// `repeats` independent random train subsets; the rest is the test set.
    #[default]
    MonteCarlo,
    /// One shuffled permutation cut into `size / train_size` disjoint training blocks.
    DisjointFolds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_size: usize,
    pub repeats: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: SplitMode,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_size: 40, repeats: 10, seed: 0, mode: SplitMode::MonteCarlo }
    }
}

/// Sample indices for one repeat; both lists ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn complement(n: usize, mut train: Vec<usize>) -> Split {
    train.sort_unstable();
    let mut in_train = vec![false; n];
    for &i in &train {
        in_train[i] = true;
    }
    let test = (0..n).filter(|&i| !in_train[i]).collect();
    Split { train, test }
}

/// Splits depend only on the dataset size and the spec, never on sample contents.
pub fn make_splits(size: usize, spec: &SplitSpec) -> Result<Vec<Split>, EvalError> {
    if spec.train_size == 0 || size <= spec.train_size {
        return Err(EvalError::DatasetTooSmall { size, train_size: spec.train_size });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.mode {
        SplitMode::MonteCarlo => {
            if spec.repeats == 0 {
                return Err(EvalError::InvalidSplit("repeats must be at least 1".into()));
            }
            Ok((0..spec.repeats)
                .map(|_| complement(size, index::sample(&mut rng, size, spec.train_size).into_vec()))
                .collect())
        }
        SplitMode::DisjointFolds => {
            let mut perm: Vec<usize> = (0..size).collect();
            perm.shuffle(&mut rng);
            Ok(perm
                .chunks_exact(spec.train_size)
                .map(|block| complement(size, block.to_vec()))
                .collect())
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Score the rounded display estimate instead of the raw value.
    #[serde(default)]
    pub rounded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub repeat: usize,
    pub params: ModelParams,
    pub train_mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub pct_error: f64,
}

/// Arithmetic means over repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub rmse: f64,
    pub mae: f64,
    pub pct_error: f64,
    pub alpha: f64,
    pub beta: f64,
    pub theta_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub room_id: String,
    pub seats: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area_m2: Option<f64>,
    pub train_size: usize,
    pub test_size: usize,
    pub repeats: Vec<RepeatResult>,
    pub aggregate: Aggregate,
}

fn run_repeat(
    samples: &[TrainingSample],
    split: &Split,
    grid: &SearchGrid,
    seats: u32,
    options: EvalOptions,
    repeat: usize,
) -> Result<RepeatResult, EvalError> {
    let fit = train(split.train.iter().map(|&i| &samples[i]), grid)?;
    let mut predictions = Vec::with_capacity(split.test.len());
    let mut truths = Vec::with_capacity(split.test.len());
    for &i in &split.test {
        let raw = estimate(&fit.params, &samples[i].snapshot)?;
        predictions.push(if options.rounded { round_estimate(raw) as f64 } else { raw });
        truths.push(samples[i].truth as f64);
    }
    let mae_value = mae(&predictions, &truths)?;
    Ok(RepeatResult {
        repeat,
        params: fit.params,
        train_mse: fit.mse,
        rmse: rmse(&predictions, &truths)?,
        mae: mae_value,
        pct_error: percentage_error(mae_value, seats),
    })
}

/// Evaluate pre-computed splits. Repeats run on scoped threads; results keep split order.
pub fn cross_validate_with_splits(
    dataset: &LabeledDataset,
    splits: &[Split],
    grid: &SearchGrid,
    options: EvalOptions,
) -> Result<EvalReport, EvalError> {
    let n = dataset.samples.len();
    if splits.is_empty() {
        return Err(EvalError::InvalidSplit("no splits".into()));
    }
    for s in splits {
        if s.train.is_empty() || s.test.is_empty() || s.train.iter().chain(&s.test).any(|&i| i >= n) {
            return Err(EvalError::InvalidSplit("split indices must be non-empty and within the dataset".into()));
        }
    }
    if dataset.seats == 0 {
        return Err(EvalError::InvalidSplit("room must have at least one seat".into()));
    }

    let results: Vec<Result<RepeatResult, EvalError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = splits
            .iter()
            .enumerate()
            .map(|(k, split)| scope.spawn(move || run_repeat(&dataset.samples, split, grid, dataset.seats, options, k)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation thread panicked")).collect()
    });
    let repeats = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mean = |f: fn(&RepeatResult) -> f64| repeats.iter().map(f).sum::<f64>() / repeats.len() as f64;
    let aggregate = Aggregate {
        rmse: mean(|r| r.rmse),
        mae: mean(|r| r.mae),
        pct_error: mean(|r| r.pct_error),
        alpha: mean(|r| r.params.alpha),
        beta: mean(|r| r.params.beta),
        theta_dbm: mean(|r| r.params.theta_dbm),
    };
    Ok(EvalReport {
        room_id: dataset.room_id.clone(),
        seats: dataset.seats,
        area_m2: dataset.area_m2,
        train_size: splits[0].train.len(),
        test_size: splits[0].test.len(),
        repeats,
        aggregate,
    })
}

pub fn cross_validate(
    dataset: &LabeledDataset,
    spec: &SplitSpec,
    grid: &SearchGrid,
    options: EvalOptions,
) -> Result<EvalReport, EvalError> {
    let splits = make_splits(dataset.samples.len(), spec)?;
    cross_validate_with_splits(dataset, &splits, grid, options)
}

/// Plain-text results table, one row per room.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:>9} {:>6} {:>6} {:>6} {:>10} {:>7} {:>7} {:>8}",
        "Room", "Area[m2]", "Seats", "alpha", "beta", "theta[dBm]", "RMSE", "MAE", "Error[%]"
    );
    for r in reports {
        let a = &r.aggregate;
        let area = r.area_m2.map_or_else(|| "-".to_string(), |v| format!("{v:.0}"));
        let _ = writeln!(
            out,
            "{:<20} {:>9} {:>6} {:>6.2} {:>6.2} {:>10.2} {:>7.2} {:>7.2} {:>8.2}",
            r.room_id, area, r.seats, a.alpha, a.beta, a.theta_dbm, a.rmse, a.mae, a.pct_error
        );
    }
    out
}
