//! Single executable surface: data generation, training, evaluation,
//! sweeping, verification, and plot-data export. Exit codes: 0 success,
//! 1 usage error, 2 verification violation, 3 numerical failure.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;


use crate::cells::CellParams;
use crate::error::Error;
use crate::oracle;
use crate::tasks::{generate, read_dataset, write_dataset, TaskKind, TaskSpec};
use crate::train::{
    evaluate_model, histogram_csv, metrics_csv, parse_histogram_csv, sweep, train_model_on,
    write_output, EvalMode, EvalOptions, HistogramRow, Method, MetricsRow, SweepConfig,
    TrainConfig,
};

const VERSION_LINE: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (checkpoint magic: ADAPTHALT-CKPT-1)"
);

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "adapthalt", version = VERSION_LINE)]
/// Adaptive-computation training and verification harness.
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset file (header line + JSON sample lines).
    GenData(GenDataArgs),
    /// Train one model from a JSON config, writing metrics and a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset, writing per-sample records.
    Eval(EvalArgs),
    /// Train a (method, tau, seed) grid and write the comparison tables.
    Sweep(SweepArgs),
    /// Run the brute-force verification suites.
    Verify(VerifyArgs),
    /// Join histogram CSVs into one tidy long-format table.
    ExportPlotData(ExportArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Task kind: prefix_parity | chain_arith | nested_lookup.
    #[arg(long)]
    task: String,
    #[arg(long, default_value_t = 12)]
    payload_len: usize,
    #[arg(long, default_value_t = 8)]
    k_max: usize,
    /// Number of samples.
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training config JSON. CLI flags below override config fields.
    #[arg(long)]
    config: PathBuf,
    /// Optional dataset file; its header task spec replaces the config's.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory for metrics.csv, histogram.csv, summary.json, and
    /// checkpoint.bin (unless the config names a checkpoint path).
    #[arg(long, default_value = "runs/train")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "dact")]
    method: Method,
    #[arg(long, default_value_t = 10)]
    max_steps: usize,
    /// halting | full.
    #[arg(long, default_value = "halting")]
    mode: String,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Audit halting-mode answers against the full unroll per sample.
    #[arg(long, default_value_t = true)]
    audit: bool,
    /// Per-sample JSON-lines records.
    #[arg(long)]
    records_out: Option<PathBuf>,
    #[arg(long)]
    summary_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Sweep config JSON: base train config plus taus, seeds, methods.
    #[arg(long)]
    config: PathBuf,
    /// Worker pool size; overrides the config.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, default_value = "runs/sweep")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// all | weighted-sum | halting | bounds | gradients.
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    weighted_trials: usize,
    #[arg(long, default_value_t = 1_000)]
    halt_events: usize,
    #[arg(long, default_value_t = 10_000)]
    continuations: usize,
    #[arg(long, default_value_t = 100_000)]
    bound_trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// Histogram CSV files to join.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `argv` and executes. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successful terminations.
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NonFinite(_) => EXIT_NUMERICAL,
                _ => EXIT_USAGE,
            }
        }
    }
}

fn dispatch(cli: Cli) -> crate::error::Result<i32> {
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Sweep(args) => sweep_cmd(args),
        Command::Verify(args) => verify_cmd(args),
        Command::ExportPlotData(args) => export_cmd(args),
    }
}

fn parse_task_kind(s: &str) -> crate::error::Result<TaskKind> {
    match s {
        "prefix_parity" => Ok(TaskKind::PrefixParity),
        "chain_arith" => Ok(TaskKind::ChainArith),
        "nested_lookup" => Ok(TaskKind::NestedLookup),
        other => Err(Error::invalid(format!(
            "unknown task {other:?}, expected prefix_parity | chain_arith | nested_lookup"
        ))),
    }
}

fn gen_data(args: GenDataArgs) -> crate::error::Result<i32> {
    let kind = parse_task_kind(&args.task)?;
    let spec = TaskSpec::new(kind, args.payload_len, args.k_max, args.seed)?;
    let samples = generate(&spec, args.n)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_dataset(&args.out, &spec, &samples)?;
    println!(
        "wrote {} samples ({}, payload {}, k_max {}) to {}",
        samples.len(),
        kind.name(),
        spec.payload_len,
        spec.k_max,
        args.out.display()
    );
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct TrainSummaryFile<'a> {
    config: &'a TrainConfig,
    metrics: &'a crate::train::RunMetrics,
}

fn train_cmd(args: TrainArgs) -> crate::error::Result<i32> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut config: TrainConfig = serde_json::from_str(&text)
        .map_err(|e| Error::invalid(format!("config {}: {e}", args.config.display())))?;
    if let Some(m) = args.method {
        config.method = m;
    }
    if let Some(t) = args.tau {
        config.tau = t;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }

    let data = match &args.data {
        Some(path) => {
            let (spec, samples) = read_dataset(path)?;
            config.task = spec;
            Some(samples)
        }
        None => None,
    };

    std::fs::create_dir_all(&args.out_dir)?;
    if config.checkpoint_path.is_none() {
        config.checkpoint_path = Some(args.out_dir.join("checkpoint.bin"));
    }
    config.validate()?;

    let (_, metrics) = train_model_on(&config, data)?;

    let config_json = serde_json::to_string(&config)?;
    let metric_rows: Vec<MetricsRow> = metrics
        .per_epoch
        .iter()
        .map(|em| MetricsRow {
            method: config.method.name().to_string(),
            tau: config.tau,
            seed: config.seed,
            epoch: em.clone(),
        })
        .collect();
    let hist_rows: Vec<HistogramRow> = metrics
        .histogram
        .iter()
        .map(|bin| HistogramRow {
            method: config.method.name().to_string(),
            tau: config.tau,
            seed: config.seed,
            bin: bin.clone(),
        })
        .collect();
    write_output(
        &args.out_dir.join("metrics.csv"),
        &metrics_csv(&config_json, &metric_rows),
    )?;
    write_output(
        &args.out_dir.join("histogram.csv"),
        &histogram_csv(&config_json, &hist_rows),
    )?;
    let summary = TrainSummaryFile {
        config: &config,
        metrics: &metrics,
    };
    write_output(
        &args.out_dir.join("summary.json"),
        &format!("{}\n", serde_json::to_string_pretty(&summary)?),
    )?;

    println!(
        "best accuracy {:.4} at epoch {} with {:.3} mean steps; outputs in {}",
        metrics.best_accuracy,
        metrics.best_epoch,
        metrics.steps_at_best,
        args.out_dir.display()
    );
    if metrics.audit_violations > 0 {
        eprintln!(
            "halting audit reported {} violations",
            metrics.audit_violations
        );
        return Ok(EXIT_VIOLATION);
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct EvalConfigHeader<'a> {
    checkpoint: String,
    data: String,
    method: &'a str,
    max_steps: usize,
    mode: &'a str,
    epsilon: f64,
    audit: bool,
}

fn eval_cmd(args: EvalArgs) -> crate::error::Result<i32> {
    let mode = match args.mode.as_str() {
        "halting" => EvalMode::Halting,
        "full" => EvalMode::Full,
        other => {
            return Err(Error::invalid(format!(
                "unknown mode {other:?}, expected halting | full"
            )))
        }
    };
    let store = crate::autodiff::ParamStore::load(&args.checkpoint)?;
    let params = CellParams::from_store(store)?;
    let (spec, samples) = read_dataset(&args.data)?;
    if spec.input_dim() != params.input_dim || spec.n_classes != params.n_classes {
        return Err(Error::invalid(format!(
            "checkpoint expects input {} / classes {}, dataset implies {} / {}",
            params.input_dim,
            params.n_classes,
            spec.input_dim(),
            spec.n_classes
        )));
    }
    let opts = EvalOptions {
        mode,
        epsilon: args.epsilon,
        audit_halting: args.audit,
    };
    let (summary, records) =
        evaluate_model(&params, &samples, args.method, args.max_steps, &opts)?;

    let header = EvalConfigHeader {
        checkpoint: args.checkpoint.display().to_string(),
        data: args.data.display().to_string(),
        method: args.method.name(),
        max_steps: args.max_steps,
        mode: &args.mode,
        epsilon: args.epsilon,
        audit: args.audit,
    };
    if let Some(path) = &args.records_out {
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&serde_json::json!({ "config": header }))?);
        out.push('\n');
        for r in &records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        write_output(path, &out)?;
    }
    if let Some(path) = &args.summary_out {
        let body = serde_json::json!({ "config": header, "summary": summary });
        write_output(path, &format!("{}\n", serde_json::to_string_pretty(&body)?))?;
    }
    println!(
        "accuracy {:.4}, mean steps {:.3}, mean ponder {:.3} over {} samples",
        summary.accuracy, summary.mean_steps, summary.mean_rho, summary.n_samples
    );
    if let Some(v) = summary.audit_violations {
        if v > 0 {
            eprintln!("halting audit reported {v} violations");
            return Ok(EXIT_VIOLATION);
        }
    }
    Ok(EXIT_OK)
}

fn sweep_cmd(args: SweepArgs) -> crate::error::Result<i32> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut config: SweepConfig = serde_json::from_str(&text)
        .map_err(|e| Error::invalid(format!("config {}: {e}", args.config.display())))?;
    if let Some(jobs) = args.jobs {
        config.jobs = jobs;
    }
    let out = sweep(&config)?;
    let config_json = serde_json::to_string(&config)?;
    std::fs::create_dir_all(&args.out_dir)?;
    write_output(
        &args.out_dir.join("metrics.csv"),
        &metrics_csv(&config_json, &out.metrics),
    )?;
    write_output(
        &args.out_dir.join("histograms.csv"),
        &histogram_csv(&config_json, &out.histograms),
    )?;
    write_output(
        &args.out_dir.join("summary.json"),
        &format!("{}\n", serde_json::to_string_pretty(&out.summary)?),
    )?;
    let failed: Vec<_> = out
        .summary
        .rows
        .iter()
        .filter(|r| r.status != "ok")
        .collect();
    println!(
        "{} runs ({} failed); outputs in {}",
        out.summary.rows.len(),
        failed.len(),
        args.out_dir.display()
    );
    for row in &out.summary.tau_means {
        println!(
            "  {} tau {}: accuracy {:.4}, mean steps {:.3} over {} runs",
            row.method, row.tau, row.mean_accuracy, row.mean_steps, row.n_runs
        );
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct VerifyFile {
    config: serde_json::Value,
    passed: bool,
    reports: Vec<oracle::Report>,
}

fn verify_cmd(args: VerifyArgs) -> crate::error::Result<i32> {
    let mut reports = Vec::new();
    let run_weighted = matches!(args.suite.as_str(), "all" | "weighted-sum");
    let run_halting = matches!(args.suite.as_str(), "all" | "halting");
    let run_bounds = matches!(args.suite.as_str(), "all" | "bounds");
    let run_gradients = matches!(args.suite.as_str(), "all" | "gradients");
    if !(run_weighted || run_halting || run_bounds || run_gradients) {
        return Err(Error::invalid(format!(
            "unknown suite {:?}, expected all | weighted-sum | halting | bounds | gradients",
            args.suite
        )));
    }

    if run_weighted {
        reports.push(oracle::verify_weighted_sum(
            args.weighted_trials,
            12,
            args.seed,
        ));
    }
    if run_halting {
        reports.push(oracle::verify_halting_soundness(
            args.halt_events,
            args.continuations,
            10,
            3,
            args.seed.wrapping_add(1),
        ));
    }
    if run_bounds {
        reports.push(oracle::verify_bounds(args.bound_trials, args.seed.wrapping_add(2)));
    }
    if run_gradients {
        reports.push(oracle::verify_gradients(
            4,
            6,
            3,
            4,
            1e-2,
            args.seed.wrapping_add(3),
        )?);
    }

    let passed = reports.iter().all(|r| r.passed());
    for r in &reports {
        println!(
            "{}: {} trials, {} violations",
            r.suite,
            r.trials,
            r.violations.len()
        );
    }
    if let Some(path) = &args.out {
        let file = VerifyFile {
            config: serde_json::json!({
                "suite": args.suite,
                "weighted_trials": args.weighted_trials,
                "halt_events": args.halt_events,
                "continuations": args.continuations,
                "bound_trials": args.bound_trials,
                "seed": args.seed,
            }),
            passed,
            reports,
        };
        write_output(path, &format!("{}\n", serde_json::to_string_pretty(&file)?))?;
    }
    Ok(if passed { EXIT_OK } else { EXIT_VIOLATION })
}

fn export_cmd(args: ExportArgs) -> crate::error::Result<i32> {
    let mut out = String::from("source,method,tau,seed,complexity,variable,value\n");
    for path in &args.inputs {
        let text = std::fs::read_to_string(path)?;
        let rows = parse_histogram_csv(&text)?;
        let source = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        for r in rows {
            for (variable, value) in [
                ("mean_steps", r.bin.mean_steps),
                ("n_samples", r.bin.n_samples as f64),
                ("accuracy", r.bin.accuracy),
            ] {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    source, r.method, r.tau, r.seed, r.bin.complexity, variable, value
                ));
            }
        }
    }
    write_output(&args.out, &out)?;
    println!("wrote {}", args.out.display());
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::CHECKPOINT_MAGIC;

    #[test]
    fn version_line_carries_checkpoint_magic() {
        assert!(VERSION_LINE.contains(CHECKPOINT_MAGIC));
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run(["adapthalt", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["adapthalt", "gen-data", "--bogus", "x"]), EXIT_USAGE);
    }

    #[test]
    fn version_and_help_exit_zero() {
        assert_eq!(run(["adapthalt", "--version"]), EXIT_OK);
        assert_eq!(run(["adapthalt", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_file_is_usage_error() {
        assert_eq!(
            run([
                "adapthalt",
                "train",
                "--config",
                "/nonexistent/config.json"
            ]),
            EXIT_USAGE
        );
    }

    #[test]
    fn unknown_task_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("d.jsonl");
        assert_eq!(
            run([
                "adapthalt",
                "gen-data",
                "--task",
                "mystery",
                "--out",
                out.to_str().unwrap()
            ]),
            EXIT_USAGE
        );
    }
}
