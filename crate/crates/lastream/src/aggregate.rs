//! Dataset- and stream-level aggregation drivers.
//!
//! [`StreamSession`] is the heart of the crate: it consumes one [`TaskBatch`]
//! at a time, resolving the task's label by quality-weighted vote and then
//! scoring every involved worker's answer against that label. Its state is
//! one counter pair per distinct worker plus one emitted label per task —
//! nothing about a task is retained beyond its label, so memory does not
//! grow with answer volume per task and historical tasks never need to be
//! replayed.
//!
//! On top of the session sit four drivers:
//!
//! * [`majority_vote`] — unweighted vote counting, the baseline.
//! * [`la_onepass`] — a single streaming pass.
//! * [`la_twopass`] — a streaming pass followed by an offline re-vote of all
//!   tasks using calibrated weights derived from the final qualities.
//! * [`online_aggregate`] — chunked operation: results are snapshotted after
//!   every chunk, and the two-pass variant re-votes only the current chunk.

use std::collections::BTreeMap;

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::model::{
    estimate_label, estimate_label_wmv, wmv_weight, Hyperparameters, ModelError, TaskBatch,
    WorkerState,
};

/// Errors produced by aggregation drivers.
#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error(transparent)]
    Model(#[from] ModelError),
    /// The input contained no task batches at all.
    #[error("no task batches to aggregate")]
    NoBatches,
    /// A batch declared a different class-alphabet size than the session.
    #[error("batch for task {task_id} declares {found} classes, session expects {expected}")]
    ClassCountMismatch {
        task_id: usize,
        expected: usize,
        found: usize,
    },
}

/// Which streaming estimator a chunked run should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Labels are final as soon as their task is processed.
    Onepass,
    /// Each chunk's labels are re-voted with calibrated weights once the
    /// chunk completes.
    Twopass,
}

impl Mode {
    fn passes(self) -> u8 {
        match self {
            Mode::Onepass => 1,
            Mode::Twopass => 2,
        }
    }
}

/// Output of one aggregation run (or one chunk snapshot of an online run).
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationResult {
    /// Estimated label per task, keyed by dense task id.
    pub labels: BTreeMap<usize, usize>,
    /// Posterior-mode quality per worker observed so far. Empty for plain
    /// majority vote, which estimates no qualities.
    pub qualities: BTreeMap<usize, f64>,
    /// Number of tasks resolved.
    pub tasks_processed: usize,
    /// 1 for majority vote and one-pass, 2 when a calibrated re-vote ran.
    pub passes: u8,
}

/// Per-worker state storage, touched twice per answer (quality read, then
/// count update) — the hottest structure in a streaming pass.
///
/// Ingestion interns worker ids by first appearance and the simulator
/// numbers workers 0..M, so in practice ids arrive densely and live in a
/// plain vector indexed by id. Ids that skip ahead land in a spill map;
/// once anything spills the vector stops growing, so the two sides can
/// never both hold the same worker. Either way, storage stays at one entry
/// per distinct worker seen.
#[derive(Debug, Clone, Default)]
struct WorkerStates {
    dense: Vec<WorkerState>,
    spill: FxHashMap<usize, WorkerState>,
}

impl WorkerStates {
    fn get(&self, worker_id: usize) -> Option<&WorkerState> {
        if worker_id < self.dense.len() {
            Some(&self.dense[worker_id])
        } else {
            self.spill.get(&worker_id)
        }
    }

    fn get_or_insert(&mut self, worker_id: usize) -> &mut WorkerState {
        if worker_id < self.dense.len() {
            return &mut self.dense[worker_id];
        }
        if worker_id == self.dense.len() && self.spill.is_empty() {
            self.dense.push(WorkerState::new(worker_id));
            return self.dense.last_mut().expect("just pushed");
        }
        self.spill
            .entry(worker_id)
            .or_insert_with(|| WorkerState::new(worker_id))
    }

    fn len(&self) -> usize {
        self.dense.len() + self.spill.len()
    }

    fn iter(&self) -> impl Iterator<Item = &WorkerState> {
        self.dense.iter().chain(self.spill.values())
    }
}

/// Incremental aggregation state: worker counts plus emitted labels.
#[derive(Debug, Clone)]
pub struct StreamSession {
    hyper: Hyperparameters,
    num_classes: usize,
    states: WorkerStates,
    labels: BTreeMap<usize, usize>,
}

impl StreamSession {
    pub fn new(num_classes: usize, hyper: Hyperparameters) -> Self {
        Self {
            hyper,
            num_classes,
            states: WorkerStates::default(),
            labels: BTreeMap::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Current quality estimate for a worker; workers never seen before sit
    /// at the prior mode.
    pub fn quality(&self, worker_id: usize) -> f64 {
        match self.states.get(worker_id) {
            Some(state) => state.posterior_mode(&self.hyper),
            None => self.hyper.prior_mode(),
        }
    }

    /// Resolves one task: weighted vote with the current qualities, then one
    /// count update per answer. Returns the estimated label.
    pub fn process_batch(&mut self, batch: &TaskBatch) -> Result<usize, AggregateError> {
        if batch.num_classes() != self.num_classes {
            return Err(AggregateError::ClassCountMismatch {
                task_id: batch.task_id(),
                expected: self.num_classes,
                found: batch.num_classes(),
            });
        }
        let (label, _) = estimate_label(batch, |w| self.quality(w))?;
        for rec in batch.records() {
            self.states
                .get_or_insert(rec.worker_id)
                .record(rec.class_label, label);
        }
        self.labels.insert(batch.task_id(), label);
        Ok(label)
    }

    /// Re-votes one task with calibrated signed weights derived from the
    /// session's current qualities. Pure read: no counts change.
    pub fn reestimate_wmv(&self, batch: &TaskBatch) -> Result<usize, AggregateError> {
        if batch.num_classes() != self.num_classes {
            return Err(AggregateError::ClassCountMismatch {
                task_id: batch.task_id(),
                expected: self.num_classes,
                found: batch.num_classes(),
            });
        }
        let (label, _) =
            estimate_label_wmv(batch, |w| wmv_weight(self.quality(w), self.num_classes))?;
        Ok(label)
    }

    /// Overwrites the emitted label for a task (used by two-pass re-votes).
    pub fn set_label(&mut self, task_id: usize, label: usize) {
        self.labels.insert(task_id, label);
    }

    /// Number of state entries held: one per distinct worker seen plus one
    /// per task resolved. This is the session's entire footprint besides
    /// constants.
    pub fn state_entries(&self) -> usize {
        self.states.len() + self.labels.len()
    }

    pub fn labels(&self) -> &BTreeMap<usize, usize> {
        &self.labels
    }

    fn quality_map(&self) -> BTreeMap<usize, f64> {
        self.states
            .iter()
            .map(|state| (state.worker_id(), state.posterior_mode(&self.hyper)))
            .collect()
    }

    /// Snapshot of the labels and qualities emitted so far.
    pub fn snapshot(&self, passes: u8) -> AggregationResult {
        AggregationResult {
            labels: self.labels.clone(),
            qualities: self.quality_map(),
            tasks_processed: self.labels.len(),
            passes,
        }
    }
}

/// Unweighted vote counting per task; ties go to the smallest class index.
///
/// Order-invariant and estimates no worker qualities.
pub fn majority_vote(batches: &[TaskBatch]) -> Result<AggregationResult, AggregateError> {
    if batches.is_empty() {
        return Err(AggregateError::NoBatches);
    }
    let mut labels = BTreeMap::new();
    for batch in batches {
        // A constant weight turns the weighted vote into raw vote counts.
        let (label, _) = estimate_label(batch, |_| 1.0)?;
        labels.insert(batch.task_id(), label);
    }
    Ok(AggregationResult {
        tasks_processed: labels.len(),
        labels,
        qualities: BTreeMap::new(),
        passes: 1,
    })
}

/// One streaming pass over the batches in the order given.
///
/// Every task is labeled exactly once, with the qualities as they stood when
/// it arrived; worker counts are updated immediately afterwards.
pub fn la_onepass(
    batches: &[TaskBatch],
    hyper: Hyperparameters,
) -> Result<AggregationResult, AggregateError> {
    if batches.is_empty() {
        return Err(AggregateError::NoBatches);
    }
    let mut session = StreamSession::new(batches[0].num_classes(), hyper);
    for batch in batches {
        session.process_batch(batch)?;
    }
    Ok(session.snapshot(1))
}

/// One streaming pass, then a calibrated re-vote of every task.
///
/// The second pass maps each final quality `ŵ` to the signed weight
/// `K·ŵ - 1` and re-runs the vote for all tasks. Worker counts and
/// qualities are not touched by the re-vote, so the returned qualities are
/// identical to what [`la_onepass`] would report.
pub fn la_twopass(
    batches: &[TaskBatch],
    hyper: Hyperparameters,
) -> Result<AggregationResult, AggregateError> {
    if batches.is_empty() {
        return Err(AggregateError::NoBatches);
    }
    let mut session = StreamSession::new(batches[0].num_classes(), hyper);
    for batch in batches {
        session.process_batch(batch)?;
    }
    for batch in batches {
        let label = session.reestimate_wmv(batch)?;
        session.set_label(batch.task_id(), label);
    }
    Ok(session.snapshot(2))
}

/// Chunked streaming aggregation with a snapshot after every chunk.
///
/// Chunks are consumed strictly in order and worker state carries across
/// them. In [`Mode::Twopass`] only the chunk that just finished is re-voted
/// (with the qualities as of its end); labels emitted for earlier chunks are
/// never revised, matching the constraint that historical data cannot be
/// replayed. Each returned snapshot is cumulative over everything processed
/// so far, so with a single chunk the result equals the offline run of the
/// same mode.
pub fn online_aggregate<'a, I>(
    chunks: I,
    hyper: Hyperparameters,
    mode: Mode,
) -> Result<Vec<AggregationResult>, AggregateError>
where
    I: IntoIterator<Item = &'a [TaskBatch]>,
{
    let mut session: Option<StreamSession> = None;
    let mut snapshots = Vec::new();
    for chunk in chunks {
        for batch in chunk {
            session
                .get_or_insert_with(|| StreamSession::new(batch.num_classes(), hyper))
                .process_batch(batch)?;
        }
        if let Some(session) = session.as_mut() {
            if mode == Mode::Twopass {
                for batch in chunk {
                    let label = session.reestimate_wmv(batch)?;
                    session.set_label(batch.task_id(), label);
                }
            }
            snapshots.push(session.snapshot(mode.passes()));
        } else {
            return Err(AggregateError::NoBatches);
        }
    }
    if snapshots.is_empty() {
        return Err(AggregateError::NoBatches);
    }
    Ok(snapshots)
}

/// Chunked majority vote: one cumulative unweighted-vote snapshot per chunk.
///
/// Majority vote needs no cross-task state, so this just accumulates labels
/// chunk by chunk. Useful as the baseline in online comparisons.
pub fn online_majority_vote<'a, I>(chunks: I) -> Result<Vec<AggregationResult>, AggregateError>
where
    I: IntoIterator<Item = &'a [TaskBatch]>,
{
    let mut labels: BTreeMap<usize, usize> = BTreeMap::new();
    let mut snapshots = Vec::new();
    let mut saw_batch = false;
    for chunk in chunks {
        for batch in chunk {
            saw_batch = true;
            let (label, _) = estimate_label(batch, |_| 1.0)?;
            labels.insert(batch.task_id(), label);
        }
        snapshots.push(AggregationResult {
            labels: labels.clone(),
            qualities: BTreeMap::new(),
            tasks_processed: labels.len(),
            passes: 1,
        });
    }
    if !saw_batch {
        return Err(AggregateError::NoBatches);
    }
    Ok(snapshots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LabelRecord;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn batch(task_id: usize, votes: &[(usize, usize)], num_classes: usize) -> TaskBatch {
        let records = votes
            .iter()
            .map(|&(worker_id, class_label)| LabelRecord {
                task_id,
                worker_id,
                class_label,
            })
            .collect();
        TaskBatch::new(task_id, records, num_classes).unwrap()
    }

    /// Two tasks, three workers, two classes — small enough to trace by hand.
    ///
    /// Task 0: workers 0 and 1 say class 0, worker 2 says class 1.
    /// Task 1: worker 0 says class 1, workers 1 and 2 say class 0.
    fn hand_trace_batches() -> Vec<TaskBatch> {
        vec![
            batch(0, &[(0, 0), (1, 0), (2, 1)], 2),
            batch(1, &[(0, 1), (1, 0), (2, 0)], 2),
        ]
    }

    #[test]
    fn single_worker_single_task_echoes_the_label() {
        let batches = vec![batch(0, &[(0, 1)], 3)];
        let res = la_onepass(&batches, Hyperparameters::default()).unwrap();
        assert_eq!(res.labels[&0], 1);
        assert_eq!(res.tasks_processed, 1);
    }

    #[test]
    fn onepass_hand_trace() {
        // Under Beta(2,2) everyone starts at quality 1/2.
        //
        // Task 0: scores [1.0, 0.5] → label 0. Workers 0,1 agreed (1/1),
        // worker 2 disagreed (0/1): qualities become 2/3, 2/3, 1/3.
        //
        // Task 1: scores [2/3 + 1/3, 2/3] = [1.0, 2/3] → label 0. Worker 0
        // disagreed (1/2 → 1/2), workers 1,2 agreed → 3/4 and 1/2.
        let res = la_onepass(&hand_trace_batches(), Hyperparameters::default()).unwrap();
        assert_eq!(res.labels[&0], 0);
        assert_eq!(res.labels[&1], 0);
        assert_relative_eq!(res.qualities[&0], 0.5);
        assert_relative_eq!(res.qualities[&1], 0.75);
        assert_relative_eq!(res.qualities[&2], 0.5);
        assert_eq!(res.tasks_processed, 2);
        assert_eq!(res.passes, 1);
    }

    #[test]
    fn twopass_hand_trace() {
        // Calibrated weights from the final qualities: v = 2ŵ - 1 gives
        // {0: 0.0, 1: 0.5, 2: 0.0}. Re-vote: task 0 scores [0.5, 0.0] → 0;
        // task 1 scores [0.5, 0.0] → 0. Labels unchanged, qualities as in
        // the one-pass run.
        let res = la_twopass(&hand_trace_batches(), Hyperparameters::default()).unwrap();
        assert_eq!(res.labels[&0], 0);
        assert_eq!(res.labels[&1], 0);
        assert_relative_eq!(res.qualities[&0], 0.5);
        assert_relative_eq!(res.qualities[&1], 0.75);
        assert_relative_eq!(res.qualities[&2], 0.5);
        assert_eq!(res.passes, 2);
    }

    #[test]
    fn majority_vote_counts_votes() {
        let batches = vec![
            batch(0, &[(0, 1), (1, 1), (2, 0)], 2),
            batch(1, &[(0, 0), (1, 1)], 2), // tie → class 0
        ];
        let res = majority_vote(&batches).unwrap();
        assert_eq!(res.labels[&0], 1);
        assert_eq!(res.labels[&1], 0);
        assert!(res.qualities.is_empty());
    }

    #[test]
    fn majority_vote_is_order_invariant() {
        let mut batches = hand_trace_batches();
        let forward = majority_vote(&batches).unwrap();
        batches.reverse();
        let backward = majority_vote(&batches).unwrap();
        assert_eq!(forward.labels, backward.labels);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(majority_vote(&[]), Err(AggregateError::NoBatches));
        assert_eq!(
            la_onepass(&[], Hyperparameters::default()),
            Err(AggregateError::NoBatches)
        );
        assert_eq!(
            la_twopass(&[], Hyperparameters::default()),
            Err(AggregateError::NoBatches)
        );
        let chunks: Vec<&[TaskBatch]> = vec![];
        assert_eq!(
            online_aggregate(chunks, Hyperparameters::default(), Mode::Onepass),
            Err(AggregateError::NoBatches)
        );
    }

    #[test]
    fn session_rejects_mismatched_class_count() {
        let mut session = StreamSession::new(2, Hyperparameters::default());
        let b = batch(0, &[(0, 1)], 3);
        assert_eq!(
            session.process_batch(&b),
            Err(AggregateError::ClassCountMismatch {
                task_id: 0,
                expected: 2,
                found: 3
            })
        );
    }

    #[test]
    fn first_task_matches_majority_vote_under_symmetric_prior() {
        // Before any counts exist every worker sits at the prior mode, so
        // the weighted vote on the very first task is a scaled majority vote.
        let b = batch(0, &[(0, 2), (1, 2), (2, 0), (3, 1)], 3);
        let mut session = StreamSession::new(3, Hyperparameters::default());
        let streamed = session.process_batch(&b).unwrap();
        let mv = majority_vote(std::slice::from_ref(&b)).unwrap();
        assert_eq!(streamed, mv.labels[&0]);
    }

    #[test]
    fn twopass_reports_same_qualities_as_onepass() {
        let batches = hand_trace_batches();
        let one = la_onepass(&batches, Hyperparameters::default()).unwrap();
        let two = la_twopass(&batches, Hyperparameters::default()).unwrap();
        assert_eq!(one.qualities, two.qualities);
    }

    #[test]
    fn reestimate_does_not_touch_counts() {
        let batches = hand_trace_batches();
        let mut session = StreamSession::new(2, Hyperparameters::default());
        for b in &batches {
            session.process_batch(b).unwrap();
        }
        let before: Vec<f64> = (0..3).map(|w| session.quality(w)).collect();
        for b in &batches {
            session.reestimate_wmv(b).unwrap();
        }
        let after: Vec<f64> = (0..3).map(|w| session.quality(w)).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn single_chunk_online_equals_offline() {
        let batches = hand_trace_batches();
        for (mode, offline) in [
            (
                Mode::Onepass,
                la_onepass(&batches, Hyperparameters::default()).unwrap(),
            ),
            (
                Mode::Twopass,
                la_twopass(&batches, Hyperparameters::default()).unwrap(),
            ),
        ] {
            let snaps =
                online_aggregate(vec![&batches[..]], Hyperparameters::default(), mode).unwrap();
            assert_eq!(snaps.len(), 1);
            // Bit-identical, not just approximately equal: same code path,
            // same arithmetic.
            assert_eq!(snaps[0], offline);
        }
    }

    #[test]
    fn online_snapshots_are_cumulative_and_final_labels_stick() {
        let batches = hand_trace_batches();
        let chunks = vec![&batches[..1], &batches[1..]];
        let snaps = online_aggregate(chunks, Hyperparameters::default(), Mode::Twopass).unwrap();
        assert_eq!(snaps.len(), 2);
        assert_eq!(snaps[0].tasks_processed, 1);
        assert_eq!(snaps[1].tasks_processed, 2);
        // The label emitted for chunk 0's task survives into snapshot 1
        // untouched: two-pass online never revises historical chunks.
        assert_eq!(snaps[1].labels[&0], snaps[0].labels[&0]);
    }

    #[test]
    fn online_majority_vote_accumulates() {
        let batches = [
            batch(0, &[(0, 1), (1, 1)], 2),
            batch(1, &[(0, 0), (1, 0)], 2),
        ];
        let snaps = online_majority_vote(vec![&batches[..1], &batches[1..]]).unwrap();
        assert_eq!(snaps[0].labels.len(), 1);
        assert_eq!(snaps[1].labels.len(), 2);
        assert_eq!(snaps[1].labels[&0], 1);
        assert_eq!(snaps[1].labels[&1], 0);
    }

    #[test]
    fn sparse_worker_ids_keep_one_state_per_worker() {
        // Ids arrive out of dense order, so every state lands in the spill
        // map; repeated answers from the same worker must keep updating the
        // one state. All votes are unanimous, so quality just counts
        // agreements: (agreed + 1) / (answered + 2) under Beta(2,2).
        let batches = vec![
            batch(0, &[(5, 0), (0, 0)], 2),
            batch(1, &[(5, 1), (1, 1)], 2),
            batch(2, &[(5, 0), (0, 0)], 2),
        ];
        let res = la_onepass(&batches, Hyperparameters::default()).unwrap();
        let keys: Vec<usize> = res.qualities.keys().copied().collect();
        assert_eq!(keys, vec![0, 1, 5]);
        assert_relative_eq!(res.qualities[&5], 0.8); // 3 of 3
        assert_relative_eq!(res.qualities[&0], 0.75); // 2 of 2
        assert_relative_eq!(res.qualities[&1], 2.0 / 3.0); // 1 of 1
    }

    /// Random task batches over small worker/class universes.
    fn arb_batches() -> impl Strategy<Value = Vec<TaskBatch>> {
        proptest::collection::vec(
            proptest::collection::vec((0usize..10, 0usize..3), 1..8),
            1..30,
        )
        .prop_map(|tasks| {
            tasks
                .into_iter()
                .enumerate()
                .map(|(t, votes)| batch(t, &votes, 3))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn session_memory_is_bounded_by_workers_plus_tasks(batches in arb_batches()) {
            let mut session = StreamSession::new(3, Hyperparameters::default());
            let mut seen_workers = std::collections::HashSet::new();
            for (t, b) in batches.iter().enumerate() {
                session.process_batch(b).unwrap();
                for rec in b.records() {
                    seen_workers.insert(rec.worker_id);
                }
                prop_assert!(session.state_entries() <= seen_workers.len() + t + 1);
            }
        }

        #[test]
        fn qualities_are_keyed_exactly_by_observed_workers(batches in arb_batches()) {
            let res = la_onepass(&batches, Hyperparameters::default()).unwrap();
            let mut seen: Vec<usize> = batches
                .iter()
                .flat_map(|b| b.records().iter().map(|r| r.worker_id))
                .collect();
            seen.sort_unstable();
            seen.dedup();
            let keys: Vec<usize> = res.qualities.keys().copied().collect();
            prop_assert_eq!(keys, seen);
            for &w in res.qualities.keys() {
                prop_assert!((0.0..=1.0).contains(&res.qualities[&w]));
            }
        }

        #[test]
        fn every_task_gets_exactly_one_label(batches in arb_batches()) {
            let res = la_twopass(&batches, Hyperparameters::default()).unwrap();
            prop_assert_eq!(res.labels.len(), batches.len());
            for b in &batches {
                prop_assert!(res.labels[&b.task_id()] < 3);
            }
        }

        #[test]
        fn chunked_onepass_final_snapshot_equals_offline(
            batches in arb_batches(),
            split in 0usize..30,
        ) {
            // One-pass labels are final on arrival, so chunk boundaries can
            // not change anything about the final snapshot.
            let cut = split.min(batches.len());
            let chunks: Vec<&[TaskBatch]> = if cut == 0 || cut == batches.len() {
                vec![&batches[..]]
            } else {
                vec![&batches[..cut], &batches[cut..]]
            };
            let snaps =
                online_aggregate(chunks, Hyperparameters::default(), Mode::Onepass).unwrap();
            let offline = la_onepass(&batches, Hyperparameters::default()).unwrap();
            prop_assert_eq!(snaps.last().unwrap(), &offline);
        }
    }
}
