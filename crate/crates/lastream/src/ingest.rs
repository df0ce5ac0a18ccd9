//! CSV ingestion, key densification and deterministic task shuffling.
//!
//! The on-disk layout is the one shared by the public crowdsourcing
//! benchmark datasets: an answer file with header `question,worker,answer`
//! (one row per worker answer) and an optional ground-truth file with header
//! `question,truth`. Keys are arbitrary strings; [`build_dataset`] re-indexes
//! them to dense integers so the aggregators can work with plain `usize`
//! ids. Exports write the same two formats back out with the dense keys,
//! and re-parsing an export reproduces the dense structures exactly.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{LabelRecord, ModelError, TaskBatch};

/// Expected header of an answer file.
pub const LABEL_HEADER: [&str; 3] = ["question", "worker", "answer"];
/// Expected header of a ground-truth file.
pub const TRUTH_HEADER: [&str; 2] = ["question", "truth"];

/// Errors produced while reading or assembling datasets.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: expected header `{expected}`, found `{found}`")]
    BadHeader {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: empty field on line {line}")]
    EmptyField { path: PathBuf, line: u64 },
    #[error("truth class `{class}` outside label alphabet (pass a declared class count to admit unobserved classes)")]
    TruthClassUnknown { class: String },
    #[error("declared {declared} classes but the records use {observed}")]
    DeclaredClassesTooSmall { declared: usize, observed: usize },
    #[error("no label records")]
    NoRecords,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One answer row with its original string keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub task_key: String,
    pub worker_key: String,
    pub label_key: String,
}

/// Parsed answer file: rows in file order, minus dropped duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedLabels {
    pub records: Vec<RawRecord>,
    /// Rows dropped because the same (task, worker) pair had already
    /// answered; the first answer wins.
    pub duplicates_dropped: usize,
}

/// Parsed ground-truth file: entries in file order, minus dropped duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTruth {
    pub entries: Vec<(String, String)>,
    /// Entries dropped because the task already had a truth row; first wins.
    pub duplicates_dropped: usize,
}

fn open_csv(path: &Path, expected_header: &[&str]) -> Result<csv::Reader<File>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers().map_err(|source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let found: Vec<&str> = headers.iter().collect();
    if found != expected_header {
        return Err(IngestError::BadHeader {
            path: path.to_path_buf(),
            expected: expected_header.join(","),
            found: found.join(","),
        });
    }
    Ok(reader)
}

fn field<'r>(
    record: &'r csv::StringRecord,
    idx: usize,
    path: &Path,
) -> Result<&'r str, IngestError> {
    let value = record.get(idx).unwrap_or("");
    if value.is_empty() {
        return Err(IngestError::EmptyField {
            path: path.to_path_buf(),
            line: record.position().map(|p| p.line()).unwrap_or(0),
        });
    }
    Ok(value)
}

/// Reads an answer file (`question,worker,answer`).
///
/// Rows keep file order. When the same (task, worker) pair appears more than
/// once only the first answer is kept; the drop count is reported.
pub fn parse_labels(path: &Path) -> Result<ParsedLabels, IngestError> {
    let mut reader = open_csv(path, &LABEL_HEADER)?;
    let mut records = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut duplicates_dropped = 0;
    for row in reader.records() {
        let row = row.map_err(|source| IngestError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let task = field(&row, 0, path)?;
        let worker = field(&row, 1, path)?;
        let label = field(&row, 2, path)?;
        if !seen.insert((task.to_string(), worker.to_string())) {
            duplicates_dropped += 1;
            continue;
        }
        records.push(RawRecord {
            task_key: task.to_string(),
            worker_key: worker.to_string(),
            label_key: label.to_string(),
        });
    }
    Ok(ParsedLabels {
        records,
        duplicates_dropped,
    })
}

/// Reads a ground-truth file (`question,truth`).
///
/// Entries keep file order; repeated tasks keep their first truth row.
pub fn parse_truth(path: &Path) -> Result<ParsedTruth, IngestError> {
    let mut reader = open_csv(path, &TRUTH_HEADER)?;
    let mut entries = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut duplicates_dropped = 0;
    for row in reader.records() {
        let row = row.map_err(|source| IngestError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let task = field(&row, 0, path)?;
        let truth = field(&row, 1, path)?;
        if !seen.insert(task.to_string()) {
            duplicates_dropped += 1;
            continue;
        }
        entries.push((task.to_string(), truth.to_string()));
    }
    Ok(ParsedTruth {
        entries,
        duplicates_dropped,
    })
}

/// Bidirectional map between original string keys and dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyMap {
    by_key: HashMap<String, usize>,
    keys: Vec<String>,
}

impl KeyMap {
    fn intern(&mut self, key: &str) -> usize {
        if let Some(&idx) = self.by_key.get(key) {
            return idx;
        }
        let idx = self.keys.len();
        self.keys.push(key.to_string());
        self.by_key.insert(key.to_string(), idx);
        idx
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.by_key.get(key).copied()
    }

    pub fn key_of(&self, index: usize) -> Option<&str> {
        self.keys.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// The three key spaces of a dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMaps {
    pub tasks: KeyMap,
    pub workers: KeyMap,
    pub classes: KeyMap,
}

/// A fully densified dataset ready for aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One batch per task, in canonical order (task first appearance in the
    /// answer file). Record order within a batch is file order.
    pub batches: Vec<TaskBatch>,
    /// Class-alphabet size shared by every batch.
    pub num_classes: usize,
    /// Ground truth for the evaluated subset of tasks, dense-keyed.
    pub truth: BTreeMap<usize, usize>,
    /// String-key ↔ dense-index mappings for tasks, workers and classes.
    pub id_maps: IdMaps,
    /// Truth entries dropped because their task never received an answer.
    pub orphan_truths_dropped: usize,
}

impl Dataset {
    pub fn num_tasks(&self) -> usize {
        self.batches.len()
    }

    pub fn num_workers(&self) -> usize {
        self.id_maps.workers.len()
    }

    pub fn num_records(&self) -> usize {
        self.batches.iter().map(|b| b.records().len()).sum()
    }

    /// Copy of the dataset with task batches in a seeded random order.
    ///
    /// Fisher–Yates driven by ChaCha8 keyed directly with `seed`, so a given
    /// (dataset, seed) pair always yields the same order on every platform.
    pub fn shuffled(&self, seed: u64) -> Dataset {
        let mut shuffled = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shuffled.batches.len();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            shuffled.batches.swap(i, j);
        }
        shuffled
    }

    /// Writes the answers back out as `question,worker,answer` with dense
    /// integer keys, batches in canonical order.
    pub fn export_labels(&self, path: &Path) -> Result<(), IngestError> {
        let mut writer = csv::Writer::from_path(path).map_err(|source| IngestError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let io_err = |source: csv::Error| IngestError::Csv {
            path: path.to_path_buf(),
            source,
        };
        writer.write_record(LABEL_HEADER).map_err(io_err)?;
        for batch in &self.batches {
            for rec in batch.records() {
                writer
                    .write_record([
                        rec.task_id.to_string(),
                        rec.worker_id.to_string(),
                        rec.class_label.to_string(),
                    ])
                    .map_err(io_err)?;
            }
        }
        writer.flush().map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(())
    }

    /// Writes the ground truth as `question,truth` with dense integer keys,
    /// ordered by dense task id.
    pub fn export_truth(&self, path: &Path) -> Result<(), IngestError> {
        let mut writer = csv::Writer::from_path(path).map_err(|source| IngestError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let io_err = |source: csv::Error| IngestError::Csv {
            path: path.to_path_buf(),
            source,
        };
        writer.write_record(TRUTH_HEADER).map_err(io_err)?;
        for (&task, &class) in &self.truth {
            writer
                .write_record([task.to_string(), class.to_string()])
                .map_err(io_err)?;
        }
        writer.flush().map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(())
    }
}

/// Densifies raw records and truth entries into a [`Dataset`].
///
/// Task ids follow first appearance in `records`; worker and class ids
/// follow first appearance once records are grouped by task, which is the
/// order exports are written in — this is what makes export→parse→build
/// reproduce a dataset exactly. Truth entries whose task never received an
/// answer are dropped (and counted). A truth class that never appears among
/// the answers is an error unless `declared_classes` is given, in which case
/// it is appended to the alphabet.
///
/// `declared_classes` optionally fixes the alphabet size `K`; it must be at
/// least the number of distinct classes observed.
pub fn build_dataset(
    records: &[RawRecord],
    truth: &[(String, String)],
    declared_classes: Option<usize>,
) -> Result<Dataset, IngestError> {
    if records.is_empty() {
        return Err(IngestError::NoRecords);
    }

    // Group record indices by task, tasks in first-appearance order.
    let mut tasks = KeyMap::default();
    let mut grouped: Vec<Vec<usize>> = Vec::new();
    for (idx, rec) in records.iter().enumerate() {
        let task = tasks.intern(&rec.task_key);
        if task == grouped.len() {
            grouped.push(Vec::new());
        }
        grouped[task].push(idx);
    }

    // Intern workers and classes by walking the grouped stream.
    let mut workers = KeyMap::default();
    let mut classes = KeyMap::default();
    let mut dense: Vec<Vec<LabelRecord>> = Vec::with_capacity(grouped.len());
    for (task_id, members) in grouped.iter().enumerate() {
        let mut batch = Vec::with_capacity(members.len());
        for &idx in members {
            let rec = &records[idx];
            batch.push(LabelRecord {
                task_id,
                worker_id: workers.intern(&rec.worker_key),
                class_label: classes.intern(&rec.label_key),
            });
        }
        dense.push(batch);
    }

    // Resolve truth: drop orphans, then intern any classes the answers never
    // used (only legal when the alphabet size was declared up front).
    let mut kept: Vec<(usize, &str)> = Vec::new();
    let mut claimed: HashSet<usize> = HashSet::new();
    let mut orphan_truths_dropped = 0;
    for (task_key, class_key) in truth {
        match tasks.index_of(task_key) {
            Some(task) if claimed.insert(task) => kept.push((task, class_key)),
            Some(_) => {} // duplicate truth for a task: first wins
            None => orphan_truths_dropped += 1,
        }
    }
    kept.sort_by_key(|&(task, _)| task);
    let mut truth_map = BTreeMap::new();
    for (task, class_key) in kept {
        let class = match classes.index_of(class_key) {
            Some(c) => c,
            None if declared_classes.is_some() => classes.intern(class_key),
            None => {
                return Err(IngestError::TruthClassUnknown {
                    class: class_key.to_string(),
                })
            }
        };
        truth_map.insert(task, class);
    }

    let num_classes = match declared_classes {
        Some(declared) if declared < classes.len() => {
            return Err(IngestError::DeclaredClassesTooSmall {
                declared,
                observed: classes.len(),
            })
        }
        Some(declared) => declared,
        None => classes.len(),
    };

    let batches = dense
        .into_iter()
        .enumerate()
        .map(|(task_id, recs)| TaskBatch::new(task_id, recs, num_classes))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(Dataset {
        batches,
        num_classes,
        truth: truth_map,
        id_maps: IdMaps {
            tasks,
            workers,
            classes,
        },
        orphan_truths_dropped,
    })
}

/// A dataset loaded from disk plus the row-level cleaning counters.
#[derive(Debug)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub duplicate_labels_dropped: usize,
    pub duplicate_truths_dropped: usize,
}

/// Loads an answer file and optional truth file into a dense dataset.
pub fn load_dataset(
    labels_path: &Path,
    truth_path: Option<&Path>,
    declared_classes: Option<usize>,
) -> Result<LoadedDataset, IngestError> {
    let labels = parse_labels(labels_path)?;
    let truth = match truth_path {
        Some(path) => parse_truth(path)?,
        None => ParsedTruth {
            entries: Vec::new(),
            duplicates_dropped: 0,
        },
    };
    let dataset = build_dataset(&labels.records, &truth.entries, declared_classes)?;
    Ok(LoadedDataset {
        dataset,
        duplicate_labels_dropped: labels.duplicates_dropped,
        duplicate_truths_dropped: truth.duplicates_dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write as _;

    fn raw(task: &str, worker: &str, label: &str) -> RawRecord {
        RawRecord {
            task_key: task.to_string(),
            worker_key: worker.to_string(),
            label_key: label.to_string(),
        }
    }

    fn truth_of(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|&(t, c)| (t.to_string(), c.to_string()))
            .collect()
    }

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn parse_labels_keeps_file_order_and_drops_duplicates() {
        let f = write_temp(
            "question,worker,answer\n\
             q2,wA,yes\n\
             q1,wB,no\n\
             q2,wA,no\n\
             q2,wB,yes\n",
        );
        let parsed = parse_labels(f.path()).unwrap();
        assert_eq!(parsed.duplicates_dropped, 1);
        assert_eq!(
            parsed.records,
            vec![
                raw("q2", "wA", "yes"),
                raw("q1", "wB", "no"),
                raw("q2", "wB", "yes")
            ]
        );
    }

    #[test]
    fn parse_truth_first_entry_wins() {
        let f = write_temp("question,truth\nq1,yes\nq1,no\nq2,no\n");
        let parsed = parse_truth(f.path()).unwrap();
        assert_eq!(parsed.duplicates_dropped, 1);
        assert_eq!(parsed.entries, truth_of(&[("q1", "yes"), ("q2", "no")]));
    }

    #[test]
    fn parse_rejects_unknown_header() {
        let f = write_temp("question,annotator,answer\nq1,w1,a\n");
        let err = parse_labels(f.path()).unwrap_err();
        assert!(matches!(err, IngestError::BadHeader { .. }), "{err}");
        assert!(err.to_string().contains("question,worker,answer"));
    }

    #[test]
    fn parse_rejects_short_row_with_line_number() {
        let f = write_temp("question,worker,answer\nq1,w1,a\nq2,w2\n");
        let err = parse_labels(f.path()).unwrap_err();
        assert!(err.to_string().contains("line: 3"), "{err}");
    }

    #[test]
    fn parse_rejects_empty_field_with_line_number() {
        let f = write_temp("question,worker,answer\nq1,w1,a\nq2,,b\n");
        let err = parse_labels(f.path()).unwrap_err();
        assert!(
            matches!(err, IngestError::EmptyField { line: 3, .. }),
            "{err}"
        );
    }

    #[test]
    fn missing_file_error_names_the_path() {
        let err = parse_labels(Path::new("/nonexistent/label.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/label.csv"));
    }

    #[test]
    fn tasks_are_densified_in_first_appearance_order() {
        let records = vec![raw("t9", "w", "a"), raw("t3", "w", "a")];
        let ds = build_dataset(&records, &[], None).unwrap();
        assert_eq!(ds.id_maps.tasks.index_of("t9"), Some(0));
        assert_eq!(ds.id_maps.tasks.index_of("t3"), Some(1));
        assert_eq!(ds.id_maps.tasks.key_of(0), Some("t9"));
        assert_eq!(ds.batches[0].task_id(), 0);
        assert_eq!(ds.batches[1].task_id(), 1);
    }

    #[test]
    fn records_stay_grouped_by_task_in_file_order() {
        let records = vec![
            raw("t1", "w1", "a"),
            raw("t2", "w2", "b"),
            raw("t1", "w3", "b"),
        ];
        let ds = build_dataset(&records, &[], None).unwrap();
        assert_eq!(ds.num_tasks(), 2);
        let first: Vec<usize> = ds.batches[0]
            .records()
            .iter()
            .map(|r| r.worker_id)
            .collect();
        // w1 interned first, then (grouped order) w3, then w2.
        assert_eq!(first, vec![0, 1]);
        assert_eq!(ds.id_maps.workers.index_of("w3"), Some(1));
        assert_eq!(ds.id_maps.workers.index_of("w2"), Some(2));
    }

    #[test]
    fn orphan_truths_are_dropped_and_counted() {
        let records = vec![raw("t1", "w1", "a"), raw("t1", "w2", "b")];
        let truth = truth_of(&[("t1", "a"), ("ghost", "b"), ("phantom", "a")]);
        let ds = build_dataset(&records, &truth, None).unwrap();
        assert_eq!(ds.orphan_truths_dropped, 2);
        assert_eq!(ds.truth.len(), 1);
        assert_eq!(ds.truth[&0], 0);
    }

    #[test]
    fn truth_class_missing_from_answers_needs_declared_alphabet() {
        let records = vec![raw("t1", "w1", "a"), raw("t1", "w2", "a")];
        let truth = truth_of(&[("t1", "c")]);
        let err = build_dataset(&records, &truth, None).unwrap_err();
        assert!(
            matches!(err, IngestError::TruthClassUnknown { .. }),
            "{err}"
        );

        let ds = build_dataset(&records, &truth, Some(2)).unwrap();
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.id_maps.classes.index_of("c"), Some(1));
        assert_eq!(ds.truth[&0], 1);
    }

    #[test]
    fn declared_class_count_must_cover_observations() {
        let records = vec![
            raw("t1", "w1", "a"),
            raw("t1", "w2", "b"),
            raw("t2", "w1", "c"),
        ];
        let err = build_dataset(&records, &[], Some(2)).unwrap_err();
        assert!(
            matches!(
                err,
                IngestError::DeclaredClassesTooSmall {
                    declared: 2,
                    observed: 3
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn empty_record_set_is_an_error() {
        assert!(matches!(
            build_dataset(&[], &[], None),
            Err(IngestError::NoRecords)
        ));
    }

    #[test]
    fn shuffle_is_deterministic_and_preserves_tasks() {
        let records: Vec<RawRecord> = (0..20)
            .map(|t| raw(&format!("t{t}"), "w", if t % 2 == 0 { "a" } else { "b" }))
            .collect();
        let ds = build_dataset(&records, &[], None).unwrap();
        let a = ds.shuffled(7);
        let b = ds.shuffled(7);
        assert_eq!(a.batches, b.batches);
        let c = ds.shuffled(8);
        assert_ne!(a.batches, c.batches);

        let mut ids: Vec<usize> = a.batches.iter().map(|b| b.task_id()).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..20).collect::<Vec<_>>());
        // Truth and id maps are untouched by shuffling.
        assert_eq!(a.id_maps, ds.id_maps);
    }

    #[test]
    fn shuffle_visits_all_permutations_uniformly() {
        // 3 tasks → 6 permutations; over 1000 seeds each should land near
        // the uniform 1/6.
        let records = vec![raw("a", "w", "x"), raw("b", "w", "x"), raw("c", "w", "x")];
        let ds = build_dataset(&records, &[], None).unwrap();
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for seed in 0..1000u64 {
            let order: Vec<usize> = ds
                .shuffled(seed)
                .batches
                .iter()
                .map(|b| b.task_id())
                .collect();
            *counts.entry(order).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 6, "all 6 orders should occur");
        for (order, count) in &counts {
            let freq = *count as f64 / 1000.0;
            assert!(
                (freq - 1.0 / 6.0).abs() < 0.05,
                "order {order:?} frequency {freq}"
            );
        }
    }

    #[test]
    fn export_then_reload_reproduces_dense_structures() {
        let records = vec![
            raw("t1", "w1", "yes"),
            raw("t2", "w2", "no"),
            raw("t1", "w3", "no"),
            raw("t3", "w2", "yes"),
        ];
        let truth = truth_of(&[("t2", "no"), ("t1", "yes")]);
        let ds = build_dataset(&records, &truth, None).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let labels_path = dir.path().join("label.csv");
        let truth_path = dir.path().join("truth.csv");
        ds.export_labels(&labels_path).unwrap();
        ds.export_truth(&truth_path).unwrap();

        let reloaded = load_dataset(&labels_path, Some(&truth_path), None).unwrap();
        assert_eq!(reloaded.dataset.batches, ds.batches);
        assert_eq!(reloaded.dataset.truth, ds.truth);
        assert_eq!(reloaded.dataset.num_classes, ds.num_classes);
        assert_eq!(reloaded.duplicate_labels_dropped, 0);
        assert_eq!(reloaded.dataset.orphan_truths_dropped, 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn round_trip_preserves_dense_structures(
            rows in proptest::collection::vec(
                (0usize..6, 0usize..5, 0usize..3),
                1..40,
            ),
            truth_rows in proptest::collection::vec((0usize..8, 0usize..3), 0..8),
        ) {
            // Arbitrary interleaving of tasks/workers, duplicate answers
            // removed the same way parsing would remove them.
            let mut seen = HashSet::new();
            let records: Vec<RawRecord> = rows
                .iter()
                .filter(|&&(t, w, _)| seen.insert((t, w)))
                .map(|&(t, w, c)| raw(&format!("T{t}"), &format!("W{w}"), &format!("C{c}")))
                .collect();
            prop_assume!(!records.is_empty());

            // Truth indices beyond the observed tasks become orphans, which
            // build_dataset must shed.
            let mut seen_truth = HashSet::new();
            let truth: Vec<(String, String)> = truth_rows
                .iter()
                .filter(|&&(t, _)| seen_truth.insert(t))
                .map(|&(t, c)| (format!("T{t}"), format!("C{c}")))
                .collect();

            let ds = match build_dataset(&records, &truth, None) {
                Ok(ds) => ds,
                // A truth class that no answer used: legal outcome, skip.
                Err(IngestError::TruthClassUnknown { .. }) => return Ok(()),
                Err(other) => return Err(TestCaseError::fail(other.to_string())),
            };

            let dir = tempfile::tempdir().unwrap();
            let labels_path = dir.path().join("label.csv");
            let truth_path = dir.path().join("truth.csv");
            ds.export_labels(&labels_path).unwrap();
            ds.export_truth(&truth_path).unwrap();
            let reloaded = load_dataset(&labels_path, Some(&truth_path), None).unwrap();

            prop_assert_eq!(&reloaded.dataset.batches, &ds.batches);
            prop_assert_eq!(&reloaded.dataset.truth, &ds.truth);
            prop_assert_eq!(reloaded.dataset.num_classes, ds.num_classes);
        }

        #[test]
        fn densification_is_a_bijection_on_observed_keys(
            rows in proptest::collection::vec(
                (0usize..6, 0usize..5, 0usize..3),
                1..40,
            ),
        ) {
            let mut seen = HashSet::new();
            let records: Vec<RawRecord> = rows
                .iter()
                .filter(|&&(t, w, _)| seen.insert((t, w)))
                .map(|&(t, w, c)| raw(&format!("T{t}"), &format!("W{w}"), &format!("C{c}")))
                .collect();
            prop_assume!(!records.is_empty());
            let ds = build_dataset(&records, &[], None).unwrap();

            for map in [&ds.id_maps.tasks, &ds.id_maps.workers, &ds.id_maps.classes] {
                for idx in 0..map.len() {
                    let key = map.key_of(idx).unwrap();
                    prop_assert_eq!(map.index_of(key), Some(idx));
                }
            }
            let distinct_tasks: HashSet<&str> =
                records.iter().map(|r| r.task_key.as_str()).collect();
            prop_assert_eq!(ds.id_maps.tasks.len(), distinct_tasks.len());
            prop_assert_eq!(ds.num_tasks(), distinct_tasks.len());
        }
    }
}
