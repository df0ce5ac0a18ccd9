//! Synthetic workers, label streams and convergence traces.
//!
//! The estimator can only be validated against known worker qualities on
//! synthetic data, so this module draws a worker population, simulates their
//! answers to a task stream, runs the streaming aggregator and records the
//! quality-estimate trajectory of every worker after every task.
//!
//! The interesting property is the error envelope: the deviation of a
//! worker's estimate from its true quality after `t` tasks behaves like a
//! centered binomial proportion, so `|ŵ - w| ≤ ε/√t` should hold with
//! probability approaching `Φ(ε) - Φ(-ε)` — about 0.683 for ε = 1 and 0.954
//! for ε = 2. [`coverage_check`] measures exactly that over the tail of a
//! trace.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::aggregate::{AggregateError, StreamSession};
use crate::model::{Hyperparameters, LabelRecord, TaskBatch};

/// Nominal probability mass of the central ±1σ band of a standard normal.
pub const NOMINAL_COVERAGE_ONE_SIGMA: f64 = 0.682689;
/// Nominal probability mass of the central ±2σ band of a standard normal.
pub const NOMINAL_COVERAGE_TWO_SIGMA: f64 = 0.954500;

/// `Φ(ε) - Φ(-ε)`: mass of the central `±ε` band of a standard normal,
/// computed as `erf(ε/√2)`.
pub fn normal_central_coverage(epsilon: f64) -> f64 {
    statrs::function::erf::erf(epsilon / std::f64::consts::SQRT_2)
}

/// Errors produced by simulation runs.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulation needs at least one worker")]
    NoWorkers,
    #[error("simulation needs at least one task")]
    NoTasks,
    #[error("simulation needs at least two classes (got {num_classes})")]
    TooFewClasses { num_classes: usize },
    #[error("quality {0} outside [0, 1]")]
    QualityOutOfRange(f64),
    #[error("quality range [{lo}, {hi}] invalid: need 0 <= lo <= hi <= 1")]
    BadQualityRange { lo: f64, hi: f64 },
    #[error("coverage needs at least 100 time slices (got {got})")]
    TraceTooShort { got: usize },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("while writing {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
}

/// How worker qualities are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QualitySpec {
    /// Every worker gets exactly this quality.
    Fixed(f64),
    /// Qualities drawn uniformly from `[lo, hi]`.
    Range { lo: f64, hi: f64 },
}

/// Parameters of one simulation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub num_workers: usize,
    pub num_tasks: usize,
    pub num_classes: usize,
    pub quality: QualitySpec,
    /// Seeds the worker draw; the label stream uses `seed + 1` so the two
    /// random streams stay independent.
    pub seed: u64,
    pub hyper: Hyperparameters,
}

impl SimConfig {
    pub fn new(
        num_workers: usize,
        num_tasks: usize,
        num_classes: usize,
        quality: QualitySpec,
        seed: u64,
        hyper: Hyperparameters,
    ) -> Result<Self, SimError> {
        if num_workers == 0 {
            return Err(SimError::NoWorkers);
        }
        if num_tasks == 0 {
            return Err(SimError::NoTasks);
        }
        if num_classes < 2 {
            return Err(SimError::TooFewClasses { num_classes });
        }
        match quality {
            QualitySpec::Fixed(q) if !(0.0..=1.0).contains(&q) => {
                return Err(SimError::QualityOutOfRange(q))
            }
            QualitySpec::Range { lo, hi } if !(0.0 <= lo && lo <= hi && hi <= 1.0) => {
                return Err(SimError::BadQualityRange { lo, hi })
            }
            _ => {}
        }
        Ok(Self {
            num_workers,
            num_tasks,
            num_classes,
            quality,
            seed,
            hyper,
        })
    }
}

/// Draws the worker-quality vector for a configuration.
///
/// Deterministic in `config.seed`; a [`QualitySpec::Fixed`] population
/// consumes no randomness at all.
pub fn generate_workers(config: &SimConfig) -> Vec<f64> {
    match config.quality {
        QualitySpec::Fixed(q) => vec![q; config.num_workers],
        QualitySpec::Range { lo, hi } => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            (0..config.num_workers)
                .map(|_| lo + (hi - lo) * rng.gen::<f64>())
                .collect()
        }
    }
}

/// A simulated task stream together with its hidden true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStream {
    /// One batch per task; every worker answers every task.
    pub batches: Vec<TaskBatch>,
    /// True label per task, index-aligned with `batches`.
    pub truths: Vec<usize>,
}

/// Simulates every worker answering every task.
///
/// Per task: a uniform true label is drawn, then worker `i` reports it with
/// probability `qualities[i]` and otherwise reports a uniform draw over the
/// remaining `num_classes - 1` labels. Deterministic in `seed`.
pub fn generate_labels(
    qualities: &[f64],
    num_tasks: usize,
    num_classes: usize,
    seed: u64,
) -> SyntheticStream {
    debug_assert!(num_classes >= 2);
    debug_assert!(qualities.iter().all(|q| (0.0..=1.0).contains(q)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batches = Vec::with_capacity(num_tasks);
    let mut truths = Vec::with_capacity(num_tasks);
    for task_id in 0..num_tasks {
        let truth = rng.gen_range(0..num_classes);
        let records = qualities
            .iter()
            .enumerate()
            .map(|(worker_id, &q)| {
                // gen::<f64>() is in [0, 1), so q = 1 always answers
                // correctly and q = 0 never does.
                let class_label = if rng.gen::<f64>() < q {
                    truth
                } else {
                    (truth + 1 + rng.gen_range(0..num_classes - 1)) % num_classes
                };
                LabelRecord {
                    task_id,
                    worker_id,
                    class_label,
                }
            })
            .collect();
        batches.push(TaskBatch::new(task_id, records, num_classes).expect("non-empty batch"));
        truths.push(truth);
    }
    SyntheticStream { batches, truths }
}

/// Quality-estimate trajectories from one streaming run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    /// The hidden quality of each worker.
    pub true_qualities: Vec<f64>,
    /// `estimates[i][t - 1]` is worker `i`'s posterior-mode quality right
    /// after task `t` was resolved (`t` runs from 1).
    pub estimates: Vec<Vec<f64>>,
}

impl SimTrace {
    pub fn num_workers(&self) -> usize {
        self.true_qualities.len()
    }

    pub fn num_slices(&self) -> usize {
        self.estimates.first().map_or(0, Vec::len)
    }

    /// Worker `i`'s estimate after task `t` (1-based).
    pub fn estimate(&self, worker: usize, t: usize) -> f64 {
        self.estimates[worker][t - 1]
    }

    /// Mean absolute estimation error across workers after task `t`.
    pub fn mean_abs_error_at(&self, t: usize) -> Option<f64> {
        if t == 0 || t > self.num_slices() || self.num_workers() == 0 {
            return None;
        }
        let total: f64 = self
            .true_qualities
            .iter()
            .enumerate()
            .map(|(i, &w)| (self.estimate(i, t) - w).abs())
            .sum();
        Some(total / self.num_workers() as f64)
    }

    /// Error envelope `ε/√t` that estimates should fall inside with the
    /// corresponding normal coverage.
    pub fn bound(epsilon: f64, t: usize) -> f64 {
        epsilon / (t as f64).sqrt()
    }

    /// Writes the full trajectory as `t,worker_id,estimate,true_quality`,
    /// one row per (task, worker) pair in task-major order.
    pub fn export_trace_csv(&self, path: &Path) -> Result<(), SimError> {
        let mut writer = csv::Writer::from_path(path).map_err(|source| SimError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let csv_err = |source: csv::Error| SimError::Csv {
            path: path.to_path_buf(),
            source,
        };
        writer
            .write_record(["t", "worker_id", "estimate", "true_quality"])
            .map_err(csv_err)?;
        for t in 1..=self.num_slices() {
            for (i, &w) in self.true_qualities.iter().enumerate() {
                writer
                    .write_record([
                        t.to_string(),
                        i.to_string(),
                        self.estimate(i, t).to_string(),
                        w.to_string(),
                    ])
                    .map_err(csv_err)?;
            }
        }
        writer.flush().map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(())
    }

    /// Writes the error envelopes as `t,epsilon,bound` in task-major order.
    pub fn export_bounds_csv(&self, path: &Path, epsilons: &[f64]) -> Result<(), SimError> {
        let mut writer = csv::Writer::from_path(path).map_err(|source| SimError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let csv_err = |source: csv::Error| SimError::Csv {
            path: path.to_path_buf(),
            source,
        };
        writer
            .write_record(["t", "epsilon", "bound"])
            .map_err(csv_err)?;
        for t in 1..=self.num_slices() {
            for &eps in epsilons {
                writer
                    .write_record([
                        t.to_string(),
                        eps.to_string(),
                        Self::bound(eps, t).to_string(),
                    ])
                    .map_err(csv_err)?;
            }
        }
        writer.flush().map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(())
    }
}

/// Runs the one-pass aggregator over a simulated stream and records every
/// worker's quality estimate after every task.
pub fn run_convergence(config: &SimConfig) -> Result<SimTrace, SimError> {
    let true_qualities = generate_workers(config);
    let stream = generate_labels(
        &true_qualities,
        config.num_tasks,
        config.num_classes,
        config.seed.wrapping_add(1),
    );
    let mut session = StreamSession::new(config.num_classes, config.hyper);
    let mut estimates = vec![Vec::with_capacity(config.num_tasks); config.num_workers];
    for batch in &stream.batches {
        session.process_batch(batch)?;
        for (i, trail) in estimates.iter_mut().enumerate() {
            trail.push(session.quality(i));
        }
    }
    Ok(SimTrace {
        true_qualities,
        estimates,
    })
}

/// Which reference point coverage is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverageReference {
    /// Deviation from the hidden true quality — the headline check.
    TrueQuality,
    /// Deviation from the run's own final estimate — isolates estimator
    /// stability from bias when ground truth is debatable.
    FinalEstimate,
}

/// Empirical vs nominal coverage of an `ε/√t` envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    pub epsilon: f64,
    /// Fraction of (worker, t) pairs in the tail with `|ŵ_t - ref| ≤ ε/√t`.
    pub empirical: f64,
    /// `Φ(ε) - Φ(-ε)`.
    pub nominal: f64,
}

/// Measures how often estimates stay inside the `ε/√t` envelope over the
/// last half of a trace (t in `(T/2, T]`), for each `ε` given.
///
/// Requires at least 100 time slices so the tail is meaningfully "late".
pub fn coverage_check(
    trace: &SimTrace,
    epsilons: &[f64],
    reference: CoverageReference,
) -> Result<Vec<Coverage>, SimError> {
    let slices = trace.num_slices();
    if slices < 100 {
        return Err(SimError::TraceTooShort { got: slices });
    }
    let start = slices / 2 + 1;
    let refs: Vec<f64> = match reference {
        CoverageReference::TrueQuality => trace.true_qualities.clone(),
        CoverageReference::FinalEstimate => (0..trace.num_workers())
            .map(|i| trace.estimate(i, slices))
            .collect(),
    };
    let mut out = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut hits = 0usize;
        let mut total = 0usize;
        for t in start..=slices {
            let envelope = SimTrace::bound(eps, t);
            for (i, &r) in refs.iter().enumerate() {
                total += 1;
                if (trace.estimate(i, t) - r).abs() <= envelope {
                    hits += 1;
                }
            }
        }
        out.push(Coverage {
            epsilon: eps,
            empirical: hits as f64 / total as f64,
            nominal: normal_central_coverage(eps),
        });
    }
    Ok(out)
}

/// Summary of coverage across several seeded runs: per-epsilon averages.
pub fn mean_coverage(per_run: &[Vec<Coverage>]) -> Vec<Coverage> {
    let mut acc: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for run in per_run {
        for c in run {
            let entry = acc
                .entry(c.epsilon.to_bits())
                .or_insert((0.0, c.nominal, 0));
            entry.0 += c.empirical;
            entry.2 += 1;
        }
    }
    acc.into_iter()
        .map(|(bits, (sum, nominal, n))| Coverage {
            epsilon: f64::from_bits(bits),
            empirical: sum / n as f64,
            nominal,
        })
        .collect()
}
