//! Command-line front end: `aggregate`, `simulate` and `bench`.
//!
//! Exit codes: 0 on success, 1 on input or runtime errors, 2 on usage
//! errors (clap's convention). All randomness is seeded, so identical flags
//! produce byte-identical outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lastream::aggregate::{la_onepass, la_twopass, majority_vote, AggregationResult};
use lastream::bench::{
    accuracy, benchmark, online_benchmark, render_json, write_csv_report, write_json_report,
    Method, NamedDataset,
};
use lastream::ingest::{load_dataset, Dataset};
use lastream::model::Hyperparameters;
use lastream::sim::{
    coverage_check, run_convergence, CoverageReference, QualitySpec, SimConfig, SimError,
};

#[derive(Parser)]
#[command(
    name = "lastream",
    version,
    about = "Streaming aggregation of crowdsourced labels with worker-quality estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate task labels (and worker qualities) from an answer file
    Aggregate(AggregateArgs),
    /// Simulate a worker population and trace quality-estimate convergence
    Simulate(SimulateArgs),
    /// Compare aggregation methods across datasets
    Bench(BenchArgs),
}

/// Beta prior on worker quality, shared by all subcommands.
#[derive(Args)]
struct PriorArgs {
    /// Prior pseudo-count of correct answers (alpha >= 1)
    #[arg(long, default_value_t = 2.0, value_parser = parse_prior)]
    alpha: f64,
    /// Prior pseudo-count of incorrect answers (beta >= 1)
    #[arg(long, default_value_t = 2.0, value_parser = parse_prior)]
    beta: f64,
}

impl PriorArgs {
    fn hyper(&self) -> Result<Hyperparameters> {
        Ok(Hyperparameters::new(self.alpha, self.beta)?)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    /// One JSON object with labels, qualities and run metadata
    Json,
    /// Estimated labels as `question,truth` rows
    Csv,
}

#[derive(Args)]
struct AggregateArgs {
    /// Answer file with header `question,worker,answer`
    #[arg(long)]
    labels: PathBuf,
    /// Ground-truth file with header `question,truth`; enables accuracy
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Aggregation method
    #[arg(long, default_value_t = Method::Twopass, value_parser = parse_method)]
    method: Method,
    /// Class-alphabet size when classes may be missing from the answers
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    classes: Option<u64>,
    /// Shuffle seed for the task order (streaming methods are
    /// order-sensitive)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    prior: PriorArgs,
    /// Write the result here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    format: OutputFormat,
    /// Also write estimated worker qualities as `worker,quality` rows
    #[arg(long)]
    qualities_out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of simulated workers
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
    /// Number of simulated tasks (time slices)
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    tasks: u64,
    /// Number of label classes
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(2..))]
    classes: u64,
    /// Give every worker exactly this quality [default: 0.6]
    #[arg(long, value_parser = parse_unit_interval, conflicts_with = "quality_range")]
    quality: Option<f64>,
    /// Draw worker qualities uniformly from [LO, HI]
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], value_parser = parse_unit_interval)]
    quality_range: Option<Vec<f64>>,
    /// Seed for the worker draw (the label stream uses seed + 1)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    prior: PriorArgs,
    /// Envelope widths for the coverage summary
    #[arg(long = "epsilon", value_delimiter = ',', default_values_t = [1.0, 2.0])]
    epsilons: Vec<f64>,
    /// Write the estimate trajectory as `t,worker_id,estimate,true_quality`
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Write the error envelopes as `t,epsilon,bound`
    #[arg(long)]
    bounds_out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory of datasets: each subdirectory holds an answer file
    /// (label.csv) and a truth file (truth.csv)
    #[arg(long)]
    data: PathBuf,
    /// Only benchmark these dataset names (comma-separated)
    #[arg(long, value_delimiter = ',')]
    datasets: Option<Vec<String>>,
    /// Methods to run (comma-separated)
    #[arg(
        long,
        value_delimiter = ',',
        value_parser = parse_method,
        default_values_t = [Method::Mv, Method::Onepass, Method::Twopass]
    )]
    methods: Vec<Method>,
    /// Seeded task-order shuffles per order-sensitive cell
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    shuffles: u64,
    /// First shuffle seed; run r uses seed + r
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    prior: PriorArgs,
    /// Stream each shuffle in chunks and score cumulatively per chunk
    #[arg(long)]
    online: bool,
    /// Number of chunks in online mode
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    chunks: u64,
    /// Worker threads across benchmark cells (keep 1 when timings matter)
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a flat per-run CSV report
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn parse_prior(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v >= 1.0 && v.is_finite() {
        Ok(v)
    } else {
        Err("prior pseudo-counts must be finite and at least 1".to_string())
    }
}

fn parse_unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err("qualities must lie in [0, 1]".to_string())
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Aggregate(args) => cmd_aggregate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Bench(args) => cmd_bench(args),
    };
    if let Err(err) = outcome {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

/// Aggregate's machine-readable output, keyed by the original string ids.
#[derive(Serialize)]
struct AggregateOutput<'a> {
    labels: BTreeMap<&'a str, &'a str>,
    qualities: BTreeMap<&'a str, f64>,
    tasks_processed: usize,
    passes: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy: Option<f64>,
}

fn cmd_aggregate(args: AggregateArgs) -> Result<()> {
    let hyper = args.prior.hyper()?;
    let loaded = load_dataset(
        &args.labels,
        args.truth.as_deref(),
        args.classes.map(|k| k as usize),
    )?;
    if loaded.duplicate_labels_dropped > 0 {
        eprintln!(
            "dropped {} duplicate answer(s) (first answer per question/worker pair wins)",
            loaded.duplicate_labels_dropped
        );
    }
    if loaded.duplicate_truths_dropped > 0 {
        eprintln!(
            "dropped {} duplicate truth row(s)",
            loaded.duplicate_truths_dropped
        );
    }
    let dataset = loaded.dataset;
    if dataset.orphan_truths_dropped > 0 {
        eprintln!(
            "dropped {} truth row(s) for questions without answers",
            dataset.orphan_truths_dropped
        );
    }

    let working = dataset.shuffled(args.seed);
    let result: AggregationResult = match args.method {
        Method::Mv => majority_vote(&working.batches)?,
        Method::Onepass => la_onepass(&working.batches, hyper)?,
        Method::Twopass => la_twopass(&working.batches, hyper)?,
    };

    let acc = if args.truth.is_some() {
        if dataset.truth.is_empty() {
            bail!("the truth file contains no usable rows for this answer file");
        }
        let acc = accuracy(&result.labels, &dataset.truth)?;
        eprintln!("accuracy {:.4} over {} questions", acc, dataset.truth.len());
        Some(acc)
    } else {
        None
    };

    let maps = &dataset.id_maps;
    let rendered = match args.format {
        OutputFormat::Json => {
            let labels: BTreeMap<&str, &str> = result
                .labels
                .iter()
                .map(|(&t, &c)| {
                    (
                        maps.tasks.key_of(t).expect("task id from this dataset"),
                        maps.classes.key_of(c).expect("class id from this dataset"),
                    )
                })
                .collect();
            let qualities: BTreeMap<&str, f64> = result
                .qualities
                .iter()
                .map(|(&w, &q)| (maps.workers.key_of(w).expect("worker id"), q))
                .collect();
            let mut text = serde_json::to_string_pretty(&AggregateOutput {
                labels,
                qualities,
                tasks_processed: result.tasks_processed,
                passes: result.passes,
                accuracy: acc,
            })?;
            text.push('\n');
            text
        }
        OutputFormat::Csv => {
            let mut text = String::from("question,truth\n");
            for (&t, &c) in &result.labels {
                text.push_str(maps.tasks.key_of(t).expect("task id"));
                text.push(',');
                text.push_str(maps.classes.key_of(c).expect("class id"));
                text.push('\n');
            }
            text
        }
    };
    emit(args.out.as_deref(), &rendered)?;

    if let Some(path) = &args.qualities_out {
        let mut text = String::from("worker,quality\n");
        for (&w, &q) in &result.qualities {
            text.push_str(maps.workers.key_of(w).expect("worker id"));
            text.push(',');
            text.push_str(&q.to_string());
            text.push('\n');
        }
        fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let quality = match &args.quality_range {
        Some(range) => {
            let (lo, hi) = (range[0], range[1]);
            if lo > hi {
                // A usage error, not a runtime error: report it as clap would.
                let mut cmd = Cli::command();
                cmd.error(
                    clap::error::ErrorKind::ValueValidation,
                    format!("--quality-range needs LO <= HI (got {lo} > {hi})"),
                )
                .exit();
            }
            QualitySpec::Range { lo, hi }
        }
        None => QualitySpec::Fixed(args.quality.unwrap_or(0.6)),
    };
    let config = SimConfig::new(
        args.workers as usize,
        args.tasks as usize,
        args.classes as usize,
        quality,
        args.seed,
        args.prior.hyper()?,
    )?;
    let trace = run_convergence(&config)?;

    if let Some(path) = &args.trace_out {
        trace.export_trace_csv(path)?;
    }
    if let Some(path) = &args.bounds_out {
        trace.export_bounds_csv(path, &args.epsilons)?;
    }

    println!(
        "workers {}  tasks {}  classes {}  seed {}",
        args.workers, args.tasks, args.classes, args.seed
    );
    match coverage_check(&trace, &args.epsilons, CoverageReference::TrueQuality) {
        Ok(vs_true) => {
            let vs_final =
                coverage_check(&trace, &args.epsilons, CoverageReference::FinalEstimate)?;
            for (t, f) in vs_true.iter().zip(&vs_final) {
                println!(
                    "epsilon {}  nominal {:.4}  coverage-vs-true {:.4}  coverage-vs-final {:.4}",
                    t.epsilon, t.nominal, t.empirical, f.empirical
                );
            }
        }
        Err(SimError::TraceTooShort { got }) => {
            println!("coverage skipped: needs at least 100 tasks (got {got})");
        }
        Err(other) => return Err(other.into()),
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let hyper = args.prior.hyper()?;
    let datasets = discover_datasets(&args.data, args.datasets.as_deref())?;
    if datasets.is_empty() {
        bail!(
            "no datasets with answer and truth files under {}",
            args.data.display()
        );
    }
    for named in &datasets {
        eprintln!(
            "dataset {}: {} questions, {} workers, {} classes, {} answers",
            named.name,
            named.dataset.num_tasks(),
            named.dataset.num_workers(),
            named.dataset.num_classes,
            named.dataset.num_records(),
        );
    }

    let reports = if args.online {
        online_benchmark(
            &datasets,
            &args.methods,
            hyper,
            args.chunks as usize,
            args.shuffles as usize,
            args.seed,
            args.jobs as usize,
        )?
    } else {
        benchmark(
            &datasets,
            &args.methods,
            hyper,
            args.shuffles as usize,
            args.seed,
            args.jobs as usize,
        )?
    };

    match &args.out {
        Some(path) => write_json_report(&reports, path)?,
        None => println!("{}", render_json(&reports)?),
    }
    if let Some(path) = &args.csv {
        write_csv_report(&reports, args.seed, path)?;
    }
    Ok(())
}

const LABEL_FILE_NAMES: [&str; 3] = ["label.csv", "answer.csv", "labels.csv"];
const TRUTH_FILE_NAMES: [&str; 2] = ["truth.csv", "gold.csv"];

fn find_file(dir: &Path, candidates: &[&str]) -> Option<PathBuf> {
    candidates
        .iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
}

/// Scans `root` for dataset directories (answer + truth file); `root` itself
/// counts as a single dataset when it holds an answer file directly.
fn discover_datasets(root: &Path, only: Option<&[String]>) -> Result<Vec<NamedDataset>> {
    let mut candidates: Vec<(String, PathBuf)> = Vec::new();
    if find_file(root, &LABEL_FILE_NAMES).is_some() {
        let name = root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string());
        candidates.push((name, root.to_path_buf()));
    } else {
        let entries = fs::read_dir(root)
            .with_context(|| format!("cannot read dataset directory {}", root.display()))?;
        for entry in entries {
            let entry = entry?;
            if entry.file_type()?.is_dir() {
                candidates.push((
                    entry.file_name().to_string_lossy().into_owned(),
                    entry.path(),
                ));
            }
        }
        candidates.sort();
    }

    let mut datasets = Vec::new();
    for (name, dir) in candidates {
        if let Some(filter) = only {
            if !filter.iter().any(|f| f == &name) {
                continue;
            }
        }
        let Some(labels) = find_file(&dir, &LABEL_FILE_NAMES) else {
            continue;
        };
        let Some(truth) = find_file(&dir, &TRUTH_FILE_NAMES) else {
            eprintln!("skipping {name}: no truth file (needed for accuracy)");
            continue;
        };
        let loaded = load_dataset(&labels, Some(&truth), None)
            .with_context(|| format!("loading dataset {name}"))?;
        report_cleaning(&name, &loaded.dataset, loaded.duplicate_labels_dropped);
        datasets.push(NamedDataset {
            name,
            dataset: loaded.dataset,
        });
    }
    if let Some(filter) = only {
        for wanted in filter {
            if !datasets.iter().any(|d| &d.name == wanted) {
                bail!("dataset `{wanted}` not found under {}", root.display());
            }
        }
    }
    Ok(datasets)
}

fn report_cleaning(name: &str, dataset: &Dataset, duplicate_labels: usize) {
    if duplicate_labels > 0 {
        eprintln!("{name}: dropped {duplicate_labels} duplicate answer(s)");
    }
    if dataset.orphan_truths_dropped > 0 {
        eprintln!(
            "{name}: dropped {} truth row(s) for questions without answers",
            dataset.orphan_truths_dropped
        );
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
        }
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .context("cannot write to stdout"),
    }
}
