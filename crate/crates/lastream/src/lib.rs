//! Streaming aggregation of crowdsourced labels.
//!
//! Crowdsourced datasets attach several noisy worker answers to every task
//! (a "question"), and the goal is to recover the true label of each task
//! together with an estimate of each worker's reliability. This crate does
//! that in a single pass over the task stream: every incoming task is labeled
//! by a quality-weighted vote over its workers, and the involved workers'
//! reliability estimates are then refreshed from the vote outcome. Memory
//! stays proportional to the number of distinct workers plus the number of
//! emitted labels, so arbitrarily long streams can be processed.
//!
//! The crate is organised as:
//!
//! * [`model`] — the Beta-Bernoulli worker model and the closed-form
//!   estimation rules (posterior-mode quality, weighted vote, calibrated
//!   second-pass weights).
//! * [`aggregate`] — drivers that run the model over whole datasets or over
//!   chunked streams: majority vote, one-pass, two-pass and online variants.
//! * [`ingest`] — CSV parsing, key densification and deterministic shuffling
//!   for the common `question,worker,answer` / `question,truth` layout.
//! * [`sim`] — synthetic worker/label generation and convergence traces for
//!   validating the estimator against known ground truth.
//! * [`bench`] — accuracy metrics, a one-sided Wilcoxon signed-rank test and
//!   benchmark harnesses producing machine-readable reports.
//!
//! The `lastream` binary exposes the same functionality on the command line
//! (`aggregate`, `simulate` and `bench` subcommands).

pub mod aggregate;
pub mod bench;
pub mod ingest;
pub mod model;
pub mod sim;

pub use aggregate::{
    la_onepass, la_twopass, majority_vote, online_aggregate, AggregateError, AggregationResult,
    Mode, StreamSession,
};
pub use bench::{
    accuracy, benchmark, online_benchmark, wilcoxon_one_sided, BenchError, Method, NamedDataset,
    RunReport, WilcoxonTest,
};
pub use ingest::{
    build_dataset, load_dataset, parse_labels, parse_truth, Dataset, IngestError, LoadedDataset,
};
pub use model::{Hyperparameters, LabelRecord, ModelError, TaskBatch, WorkerState};
pub use sim::{
    coverage_check, generate_labels, generate_workers, run_convergence, Coverage,
    CoverageReference, QualitySpec, SimConfig, SimError, SimTrace,
};
