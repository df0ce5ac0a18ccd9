//! Beta-Bernoulli worker model and closed-form estimation rules.
//!
//! Each worker is modelled by a latent quality `w ∈ [0, 1]`: the probability
//! that one of their answers matches the task's true label. Given a
//! `Beta(alpha, beta)` prior and counts of how often the worker agreed with
//! the estimated truth, the maximum-a-posteriori quality has the closed form
//!
//! ```text
//! ŵ = (correct + alpha - 1) / (labeled + alpha + beta - 2)
//! ```
//!
//! Task labels are estimated by a quality-weighted vote over the workers who
//! answered the task. A calibrated variant maps qualities to signed weights
//! `v = K·ŵ - 1` (zero at chance level `1/K`), which is what the second
//! aggregation pass uses.

use std::collections::BTreeMap;

use thiserror::Error;

/// Errors produced by model-level operations and constructors.
#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    /// A task batch carried no label records.
    #[error("no labels for task {task_id}")]
    EmptyBatch { task_id: usize },
    /// A record's class index is outside the declared class alphabet.
    #[error("class {class} out of range for {num_classes} classes (task {task_id})")]
    ClassOutOfRange {
        task_id: usize,
        class: usize,
        num_classes: usize,
    },
    /// A record in a batch belongs to a different task.
    #[error("record for task {found} in batch for task {expected}")]
    ForeignRecord { expected: usize, found: usize },
    /// Hyperparameters outside the supported range.
    #[error(
        "hyperparameters must satisfy alpha >= 1 and beta >= 1 (got alpha={alpha}, beta={beta})"
    )]
    InvalidHyperparameters { alpha: f64, beta: f64 },
    /// A worker cannot have agreed more often than they answered.
    #[error("correct count {correct} exceeds labeled count {labeled}")]
    InvalidCounts { correct: u64, labeled: u64 },
    /// The log-posterior diverges when any quality sits exactly on 0 or 1.
    #[error("log-posterior undefined at quality boundary (worker {worker_id} at {quality})")]
    QualityAtBoundary { worker_id: usize, quality: f64 },
    /// Quality/state vectors passed to the log-posterior disagree in length.
    #[error("got {qualities} qualities for {workers} worker states")]
    LengthMismatch { qualities: usize, workers: usize },
}

/// Beta prior on worker quality.
///
/// `alpha` and `beta` must both be at least 1 so the posterior mode stays in
/// closed form. The default `Beta(2, 2)` is a mild prior pulling qualities
/// toward 1/2, which is what all built-in protocols use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    alpha: f64,
    beta: f64,
}

impl Hyperparameters {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, ModelError> {
        // `!is_finite()` also rejects NaN.
        if alpha < 1.0 || beta < 1.0 || !alpha.is_finite() || !beta.is_finite() {
            return Err(ModelError::InvalidHyperparameters { alpha, beta });
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Mode of the prior itself: `(alpha - 1) / (alpha + beta - 2)`.
    ///
    /// This is the quality assigned to a worker before any of their answers
    /// have been scored. The flat prior `Beta(1, 1)` has no unique mode; 1/2
    /// is used by convention.
    pub fn prior_mode(&self) -> f64 {
        WorkerState::new(0).posterior_mode(self)
    }
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 2.0,
        }
    }
}

/// One worker's answer to one task, in dense indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelRecord {
    pub task_id: usize,
    pub worker_id: usize,
    pub class_label: usize,
}

/// All answers observed for a single task, plus the class-alphabet size.
///
/// Invariants enforced at construction: at least one record, every record
/// belongs to `task_id`, and every class label lies in `0..num_classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskBatch {
    task_id: usize,
    records: Vec<LabelRecord>,
    num_classes: usize,
}

impl TaskBatch {
    pub fn new(
        task_id: usize,
        records: Vec<LabelRecord>,
        num_classes: usize,
    ) -> Result<Self, ModelError> {
        if records.is_empty() {
            return Err(ModelError::EmptyBatch { task_id });
        }
        for rec in &records {
            if rec.task_id != task_id {
                return Err(ModelError::ForeignRecord {
                    expected: task_id,
                    found: rec.task_id,
                });
            }
            if rec.class_label >= num_classes {
                return Err(ModelError::ClassOutOfRange {
                    task_id,
                    class: rec.class_label,
                    num_classes,
                });
            }
        }
        Ok(Self {
            task_id,
            records,
            num_classes,
        })
    }

    pub fn task_id(&self) -> usize {
        self.task_id
    }

    pub fn records(&self) -> &[LabelRecord] {
        &self.records
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// Running agreement counts for one worker.
///
/// `correct_count` is how many of the worker's answers matched the estimated
/// truth at the time each task was resolved; `labeled_count` is how many
/// answers have been scored in total. `correct_count <= labeled_count` holds
/// by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkerState {
    worker_id: usize,
    correct_count: u64,
    labeled_count: u64,
}

impl WorkerState {
    /// Fresh state with no scored answers.
    pub fn new(worker_id: usize) -> Self {
        Self {
            worker_id,
            correct_count: 0,
            labeled_count: 0,
        }
    }

    /// State with explicit counts, for resuming or testing.
    pub fn with_counts(worker_id: usize, correct: u64, labeled: u64) -> Result<Self, ModelError> {
        if correct > labeled {
            return Err(ModelError::InvalidCounts { correct, labeled });
        }
        Ok(Self {
            worker_id,
            correct_count: correct,
            labeled_count: labeled,
        })
    }

    pub fn worker_id(&self) -> usize {
        self.worker_id
    }

    pub fn correct_count(&self) -> u64 {
        self.correct_count
    }

    pub fn labeled_count(&self) -> u64 {
        self.labeled_count
    }

    /// Scores one answer against the estimated truth for its task.
    ///
    /// Increments `labeled_count`, and `correct_count` iff the answer agrees
    /// with the estimate.
    pub fn record(&mut self, given_label: usize, estimated_truth: usize) {
        self.labeled_count += 1;
        if given_label == estimated_truth {
            self.correct_count += 1;
        }
    }

    /// Maximum-a-posteriori quality under a Beta prior:
    /// `(correct + alpha - 1) / (labeled + alpha + beta - 2)`.
    ///
    /// With the flat prior `Beta(1, 1)` and no scored answers the posterior
    /// is flat; 1/2 is returned by convention.
    pub fn posterior_mode(&self, hyper: &Hyperparameters) -> f64 {
        let numerator = self.correct_count as f64 + hyper.alpha - 1.0;
        let denominator = self.labeled_count as f64 + hyper.alpha + hyper.beta - 2.0;
        if denominator == 0.0 {
            0.5
        } else {
            numerator / denominator
        }
    }
}

/// Per-class vote scores for one task; length equals the class-alphabet size.
///
/// Scores are sums of per-worker qualities (non-negative) or of signed
/// calibrated weights, depending on which estimator produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores(Vec<f64>);

impl ClassScores {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Index of the largest score; ties go to the smallest class index.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

/// Estimates a task's label by quality-weighted vote.
///
/// Each class accumulates the qualities of the workers who voted for it and
/// the highest-scoring class wins, ties going to the smallest class index.
/// `quality_of` must return a quality in `[0, 1]` for every worker appearing
/// in the batch. With all qualities equal this reduces to majority vote.
pub fn estimate_label<Q>(
    batch: &TaskBatch,
    quality_of: Q,
) -> Result<(usize, ClassScores), ModelError>
where
    Q: Fn(usize) -> f64,
{
    if batch.records.is_empty() {
        return Err(ModelError::EmptyBatch {
            task_id: batch.task_id,
        });
    }
    let mut scores = vec![0.0; batch.num_classes];
    for rec in &batch.records {
        scores[rec.class_label] += quality_of(rec.worker_id);
    }
    let label = argmax(&scores);
    Ok((label, ClassScores(scores)))
}

/// Calibrated vote weight for a quality estimate: `num_classes·quality - 1`.
///
/// Zero at chance level `1/num_classes`, negative below it, so better-than-
/// chance workers pull toward their answer and adversarial workers push away
/// from theirs.
pub fn wmv_weight(quality: f64, num_classes: usize) -> f64 {
    debug_assert!(num_classes >= 2, "need at least two classes");
    num_classes as f64 * quality - 1.0
}

/// Estimates a task's label by weighted majority vote with signed weights.
///
/// Same vote-and-argmax procedure as [`estimate_label`] but weights may be
/// negative (see [`wmv_weight`]); ties still go to the smallest class index.
pub fn estimate_label_wmv<W>(
    batch: &TaskBatch,
    weight_of: W,
) -> Result<(usize, ClassScores), ModelError>
where
    W: Fn(usize) -> f64,
{
    if batch.records.is_empty() {
        return Err(ModelError::EmptyBatch {
            task_id: batch.task_id,
        });
    }
    let mut scores = vec![0.0; batch.num_classes];
    for rec in &batch.records {
        scores[rec.class_label] += weight_of(rec.worker_id);
    }
    let label = argmax(&scores);
    Ok((label, ClassScores(scores)))
}

/// Joint log-posterior of a set of quality values given agreement counts:
/// `Σ_i (C_i + alpha - 1)·ln(w_i) + (n_i - C_i + beta - 1)·ln(1 - w_i)`,
/// up to an additive constant.
///
/// Diagnostic only — the aggregators never need it because the maximiser is
/// available in closed form (it factors per worker, and each factor peaks at
/// [`WorkerState::posterior_mode`]). Every quality must lie strictly inside
/// `(0, 1)`.
pub fn log_posterior(
    qualities: &[f64],
    states: &[WorkerState],
    hyper: &Hyperparameters,
) -> Result<f64, ModelError> {
    if qualities.len() != states.len() {
        return Err(ModelError::LengthMismatch {
            qualities: qualities.len(),
            workers: states.len(),
        });
    }
    let mut total = 0.0;
    for (&w, state) in qualities.iter().zip(states) {
        if !(w > 0.0 && w < 1.0) {
            return Err(ModelError::QualityAtBoundary {
                worker_id: state.worker_id,
                quality: w,
            });
        }
        let hit = state.correct_count as f64 + hyper.alpha - 1.0;
        let miss = (state.labeled_count - state.correct_count) as f64 + hyper.beta - 1.0;
        total += hit * w.ln() + miss * (1.0 - w).ln();
    }
    Ok(total)
}

/// Convenience: posterior-mode qualities keyed by worker id.
pub fn posterior_modes(states: &[WorkerState], hyper: &Hyperparameters) -> BTreeMap<usize, f64> {
    states
        .iter()
        .map(|s| (s.worker_id, s.posterior_mode(hyper)))
        .collect()
}
