//! Accuracy metrics, paired significance testing and benchmark harnesses.
//!
//! A benchmark cell is one (dataset, method) pair. Order-sensitive methods
//! are run over several seeded shuffles of the task order and report one
//! accuracy per run; plain majority vote is order-invariant and runs once.
//! Online benchmarking splits each shuffled task order into chunks and
//! tracks cumulative accuracy after every chunk. Reports serialize to a
//! JSON array of [`RunReport`] values, optionally flattened to CSV.
//!
//! Method comparisons across datasets use a one-sided Wilcoxon signed-rank
//! test ([`wilcoxon_one_sided`]): exact tail enumeration up to 20 informative
//! pairs, and a tie- and continuity-corrected normal approximation beyond.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{
    la_onepass, la_twopass, majority_vote, online_aggregate, online_majority_vote, AggregateError,
    Mode,
};
use crate::ingest::Dataset;
use crate::model::{Hyperparameters, TaskBatch};

/// Largest number of informative pairs for which the Wilcoxon null
/// distribution is enumerated exactly; beyond this the normal approximation
/// takes over. 2^20 sign assignments enumerate in well under a millisecond
/// via the rank-sum convolution.
pub const EXACT_ENUMERATION_LIMIT: usize = 20;

/// Errors produced by metrics and benchmark harnesses.
#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no estimate for task {task}")]
    MissingEstimate { task: usize },
    #[error("no ground truth to evaluate against")]
    EmptyTruth,
    #[error("paired samples differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 5 pairs for the signed-rank test (got {got})")]
    TooFewPairs { got: usize },
    #[error("all paired differences are zero")]
    NoInformativePairs,
    #[error("paired difference at index {index} is not finite")]
    NonFiniteDifference { index: usize },
    #[error("unknown method `{0}` (valid: mv, onepass, twopass)")]
    UnknownMethod(String),
    #[error("dataset {dataset}: cannot split {tasks} tasks into {chunks} chunks")]
    BadChunkCount {
        dataset: String,
        tasks: usize,
        chunks: usize,
    },
    #[error("dataset {dataset}: no ground-truth task resolved by chunk {chunk}")]
    NoTruthSeen { dataset: String, chunk: usize },
    #[error("need at least one benchmark run")]
    ZeroRuns,
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("while writing {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("while writing {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// Aggregation methods a benchmark can exercise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mv,
    Onepass,
    Twopass,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mv, Method::Onepass, Method::Twopass];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mv => "mv",
            Method::Onepass => "onepass",
            Method::Twopass => "twopass",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mv" => Ok(Method::Mv),
            "onepass" => Ok(Method::Onepass),
            "twopass" => Ok(Method::Twopass),
            other => Err(BenchError::UnknownMethod(other.to_string())),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Fraction of ground-truth tasks whose estimate matches the truth.
///
/// Every truth task must have an estimate; tasks without ground truth are
/// ignored.
pub fn accuracy(
    estimates: &BTreeMap<usize, usize>,
    truth: &BTreeMap<usize, usize>,
) -> Result<f64, BenchError> {
    if truth.is_empty() {
        return Err(BenchError::EmptyTruth);
    }
    let mut correct = 0usize;
    for (&task, &label) in truth {
        match estimates.get(&task) {
            Some(&est) => {
                if est == label {
                    correct += 1;
                }
            }
            None => return Err(BenchError::MissingEstimate { task }),
        }
    }
    Ok(correct as f64 / truth.len() as f64)
}

/// Outcome of a one-sided Wilcoxon signed-rank test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonTest {
    /// Sum of the ranks of the positive differences (`sample - baseline`).
    pub w_statistic: f64,
    /// `P(W+ >= observed)` under the null of symmetric differences.
    pub p_value: f64,
    /// Pairs remaining after zero differences are dropped.
    pub n_used: usize,
    /// Whether the tail came from exact enumeration or the normal
    /// approximation.
    pub exact: bool,
}

/// One-sided Wilcoxon signed-rank test of `sample > baseline`.
///
/// Zero differences are dropped; tied absolute differences receive average
/// ranks. Up to [`EXACT_ENUMERATION_LIMIT`] informative pairs the tail
/// probability is exact over all 2^n sign assignments of the observed
/// ranks; beyond that a normal approximation with tie correction
/// (`var -= Σ(t³-t)/48`) and a 0.5 continuity correction is used.
pub fn wilcoxon_one_sided(sample: &[f64], baseline: &[f64]) -> Result<WilcoxonTest, BenchError> {
    if sample.len() != baseline.len() {
        return Err(BenchError::LengthMismatch {
            left: sample.len(),
            right: baseline.len(),
        });
    }
    if sample.len() < 5 {
        return Err(BenchError::TooFewPairs { got: sample.len() });
    }
    let mut diffs = Vec::with_capacity(sample.len());
    for (index, (&a, &b)) in sample.iter().zip(baseline).enumerate() {
        let d = a - b;
        if !d.is_finite() {
            return Err(BenchError::NonFiniteDifference { index });
        }
        if d != 0.0 {
            diffs.push(d);
        }
    }
    if diffs.is_empty() {
        return Err(BenchError::NoInformativePairs);
    }

    let (ranks, tie_groups) = average_ranks(&diffs);
    let n = diffs.len();
    let w_statistic: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(&d, _)| d > 0.0)
        .map(|(_, &r)| r)
        .sum();

    let (p_value, exact) = if n <= EXACT_ENUMERATION_LIMIT {
        (exact_upper_tail(&ranks, w_statistic), true)
    } else {
        (normal_upper_tail(w_statistic, n, &tie_groups), false)
    };

    Ok(WilcoxonTest {
        w_statistic,
        p_value,
        n_used: n,
        exact,
    })
}

/// Ranks of `|diffs|` in ascending order, ties averaged; also returns the
/// tie-group sizes for the variance correction.
fn average_ranks(diffs: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let n = diffs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diffs[a].abs().partial_cmp(&diffs[b].abs()).unwrap());
    let mut ranks = vec![0.0; n];
    let mut tie_groups = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        // Positions i..=j hold ranks i+1..=j+1; everyone gets the average.
        let avg = (i + j + 2) as f64 / 2.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        tie_groups.push(j - i + 1);
        i = j + 1;
    }
    (ranks, tie_groups)
}

/// Exact `P(W+ >= observed)` over all 2^n sign assignments of the ranks.
///
/// Average ranks are multiples of 1/2, so doubling them makes every rank an
/// integer and the distribution of `2·W+` a convolution over integer
/// offsets — one pass per rank instead of 2^n explicit subsets.
fn exact_upper_tail(ranks: &[f64], w_statistic: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|&r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let threshold = (2.0 * w_statistic).round() as usize;
    let above: u64 = counts[threshold.min(total + 1)..].iter().sum();
    above as f64 / (1u64 << ranks.len()) as f64
}

/// Upper-tail normal approximation with tie and continuity corrections.
fn normal_upper_tail(w_statistic: f64, n: usize, tie_groups: &[usize]) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_groups
        .iter()
        .map(|&t| {
            let t = t as f64;
            (t * t * t - t) / 48.0
        })
        .sum();
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let z = (w_statistic - mean - 0.5) / var.sqrt();
    0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
}

/// A dataset with the name it is reported under.
#[derive(Debug, Clone)]
pub struct NamedDataset {
    pub name: String,
    pub dataset: Dataset,
}

/// One benchmark cell: a (dataset, method) pair with its per-run outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub method: String,
    /// `"offline"` or `"online"`.
    pub mode: String,
    /// One accuracy per run. Offline majority vote is order-invariant and
    /// has a single run; online runs report the final-chunk cumulative
    /// accuracy.
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Mean wall-clock seconds of the aggregation call itself (shuffling and
    /// scoring excluded).
    pub seconds: f64,
    /// `log10(seconds)`, the scale used for timing comparisons.
    pub lg_sec: f64,
    /// Online only: mean cumulative accuracy after each chunk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_accuracies: Option<Vec<f64>>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Runs `cells` closures (one per report) on up to `jobs` threads, keeping
/// report order. Timing-sensitive callers should pass `jobs = 1`.
fn run_cells<F>(num_cells: usize, jobs: usize, run: F) -> Result<Vec<RunReport>, BenchError>
where
    F: Fn(usize) -> Result<RunReport, BenchError> + Sync,
{
    if jobs <= 1 || num_cells <= 1 {
        return (0..num_cells).map(run).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunReport, BenchError>>>> =
        Mutex::new((0..num_cells).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(num_cells) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= num_cells {
                    break;
                }
                let outcome = run(idx);
                slots.lock().unwrap()[idx] = Some(outcome);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every cell ran"))
        .collect()
}

/// Offline benchmark: each method on each dataset.
///
/// Order-sensitive methods run once per seeded shuffle (`base_seed + run`);
/// majority vote runs once on the canonical order since shuffling cannot
/// change it. `jobs > 1` parallelizes across cells — use 1 when the timing
/// columns matter.
pub fn benchmark(
    datasets: &[NamedDataset],
    methods: &[Method],
    hyper: Hyperparameters,
    shuffles: usize,
    base_seed: u64,
    jobs: usize,
) -> Result<Vec<RunReport>, BenchError> {
    if shuffles == 0 {
        return Err(BenchError::ZeroRuns);
    }
    let cells: Vec<(&NamedDataset, Method)> = datasets
        .iter()
        .flat_map(|d| methods.iter().map(move |&m| (d, m)))
        .collect();
    run_cells(cells.len(), jobs, |idx| {
        let (named, method) = cells[idx];
        let mut accuracies = Vec::new();
        let mut total_seconds = 0.0;
        let runs = if method == Method::Mv { 1 } else { shuffles };
        for run in 0..runs {
            let shuffled;
            let batches: &[TaskBatch] = if method == Method::Mv {
                &named.dataset.batches
            } else {
                shuffled = named.dataset.shuffled(base_seed + run as u64);
                &shuffled.batches
            };
            let start = Instant::now();
            let result = match method {
                Method::Mv => majority_vote(batches)?,
                Method::Onepass => la_onepass(batches, hyper)?,
                Method::Twopass => la_twopass(batches, hyper)?,
            };
            total_seconds += start.elapsed().as_secs_f64();
            accuracies.push(accuracy(&result.labels, &named.dataset.truth)?);
        }
        let seconds = total_seconds / runs as f64;
        Ok(RunReport {
            dataset: named.name.clone(),
            method: method.name().to_string(),
            mode: "offline".to_string(),
            mean_accuracy: mean(&accuracies),
            accuracies,
            seconds,
            lg_sec: seconds.log10(),
            chunk_accuracies: None,
        })
    })
}

/// Sizes of `num_chunks` near-equal chunks of `num_items`; the first
/// `num_items % num_chunks` chunks get one extra item.
pub fn chunk_sizes(num_items: usize, num_chunks: usize) -> Vec<usize> {
    let base = num_items / num_chunks;
    let extra = num_items % num_chunks;
    (0..num_chunks)
        .map(|i| base + usize::from(i < extra))
        .collect()
}

/// Splits a batch slice into `num_chunks` contiguous chunks per
/// [`chunk_sizes`].
pub fn split_chunks(batches: &[TaskBatch], num_chunks: usize) -> Vec<&[TaskBatch]> {
    let mut out = Vec::with_capacity(num_chunks);
    let mut start = 0;
    for size in chunk_sizes(batches.len(), num_chunks) {
        out.push(&batches[start..start + size]);
        start += size;
    }
    out
}

/// Online benchmark: chunked streaming with cumulative scoring per chunk.
///
/// Each run shuffles the task order (`base_seed + run`), splits it into
/// `num_chunks` contiguous chunks, and streams them in order. After every
/// chunk, cumulative accuracy is measured over the ground-truth tasks
/// resolved so far. The per-run accuracy is the final chunk's cumulative
/// accuracy; `chunk_accuracies` carries the per-chunk means across runs.
pub fn online_benchmark(
    datasets: &[NamedDataset],
    methods: &[Method],
    hyper: Hyperparameters,
    num_chunks: usize,
    shuffles: usize,
    base_seed: u64,
    jobs: usize,
) -> Result<Vec<RunReport>, BenchError> {
    if shuffles == 0 {
        return Err(BenchError::ZeroRuns);
    }
    for named in datasets {
        if num_chunks == 0 || num_chunks > named.dataset.num_tasks() {
            return Err(BenchError::BadChunkCount {
                dataset: named.name.clone(),
                tasks: named.dataset.num_tasks(),
                chunks: num_chunks,
            });
        }
    }
    let cells: Vec<(&NamedDataset, Method)> = datasets
        .iter()
        .flat_map(|d| methods.iter().map(move |&m| (d, m)))
        .collect();
    run_cells(cells.len(), jobs, |idx| {
        let (named, method) = cells[idx];
        let truth = &named.dataset.truth;
        let mut accuracies = Vec::new();
        let mut chunk_sums = vec![0.0; num_chunks];
        let mut total_seconds = 0.0;
        for run in 0..shuffles {
            let shuffled = named.dataset.shuffled(base_seed + run as u64);
            let chunks = split_chunks(&shuffled.batches, num_chunks);
            let start = Instant::now();
            let snapshots = match method {
                Method::Mv => online_majority_vote(chunks)?,
                Method::Onepass => online_aggregate(chunks, hyper, Mode::Onepass)?,
                Method::Twopass => online_aggregate(chunks, hyper, Mode::Twopass)?,
            };
            total_seconds += start.elapsed().as_secs_f64();
            for (chunk, snapshot) in snapshots.iter().enumerate() {
                let seen: BTreeMap<usize, usize> = truth
                    .iter()
                    .filter(|(task, _)| snapshot.labels.contains_key(task))
                    .map(|(&task, &label)| (task, label))
                    .collect();
                if seen.is_empty() {
                    return Err(BenchError::NoTruthSeen {
                        dataset: named.name.clone(),
                        chunk,
                    });
                }
                let acc = accuracy(&snapshot.labels, &seen)?;
                chunk_sums[chunk] += acc;
                if chunk + 1 == num_chunks {
                    accuracies.push(acc);
                }
            }
        }
        let seconds = total_seconds / shuffles as f64;
        Ok(RunReport {
            dataset: named.name.clone(),
            method: method.name().to_string(),
            mode: "online".to_string(),
            mean_accuracy: mean(&accuracies),
            accuracies,
            seconds,
            lg_sec: seconds.log10(),
            chunk_accuracies: Some(
                chunk_sums
                    .into_iter()
                    .map(|sum| sum / shuffles as f64)
                    .collect(),
            ),
        })
    })
}

/// Serializes reports as one JSON document: a top-level array of
/// [`RunReport`] objects.
pub fn render_json(reports: &[RunReport]) -> Result<String, serde_json::Error> {
    serde_json::to_string_pretty(reports)
}

/// Writes the JSON report document to a file.
pub fn write_json_report(reports: &[RunReport], path: &Path) -> Result<(), BenchError> {
    let file = File::create(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, reports).map_err(|source| BenchError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    writeln!(writer).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Flattens reports to per-run CSV rows:
/// `dataset,method,seed,accuracy,seconds,lg_sec`.
///
/// The seed column is the shuffle seed of the row's run (`base_seed + run`);
/// the timing columns repeat the cell's mean.
pub fn write_csv_report(
    reports: &[RunReport],
    base_seed: u64,
    path: &Path,
) -> Result<(), BenchError> {
    let mut writer = csv::Writer::from_path(path).map_err(|source| BenchError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let csv_err = |source: csv::Error| BenchError::Csv {
        path: path.to_path_buf(),
        source,
    };
    writer
        .write_record(["dataset", "method", "seed", "accuracy", "seconds", "lg_sec"])
        .map_err(csv_err)?;
    for report in reports {
        for (run, &acc) in report.accuracies.iter().enumerate() {
            writer
                .write_record([
                    report.dataset.clone(),
                    report.method.clone(),
                    (base_seed + run as u64).to_string(),
                    acc.to_string(),
                    report.seconds.to_string(),
                    report.lg_sec.to_string(),
                ])
                .map_err(csv_err)?;
        }
    }
    writer.flush().map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}
