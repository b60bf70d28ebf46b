//! Optimization loop, evaluation, and the tau-sweep harness. Each run is
//! fully deterministic given its config: data, initialization, shuffling, and
//! the optimizer all derive from explicit seeds, and sweep aggregation is
//! ordered by run specification rather than completion.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::act::{act_forward, act_ponder, act_run};
use crate::adaptive::{dact_forward, run_inference};
use crate::autodiff::{AdamConfig, Graph, NodeId, Tensor};
use crate::cells::{fixed_forward_plain, init_params, CellParams};
use crate::error::{Error, Result};
use crate::tasks::{generate, split, Sample, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dact,
    Act,
    Fixed,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dact => "dact",
            Method::Act => "act",
            Method::Fixed => "fixed",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Method> {
        match s {
            "dact" => Ok(Method::Dact),
            "act" => Ok(Method::Act),
            "fixed" => Ok(Method::Fixed),
            other => Err(Error::invalid(format!(
                "unknown method {other:?}, expected dact | act | fixed"
            ))),
        }
    }
}

fn default_state_dim() -> usize {
    64
}
fn default_max_steps() -> usize {
    10
}
fn default_epsilon() -> f64 {
    0.01
}
fn default_batch_size() -> usize {
    32
}
fn default_epochs() -> usize {
    30
}
fn default_n_train() -> usize {
    20_000
}
fn default_n_eval() -> usize {
    4_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: TaskSpec,
    #[serde(default = "default_state_dim")]
    pub state_dim: usize,
    /// Step budget N: training unrolls exactly this many steps.
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    pub method: Method,
    #[serde(default)]
    pub tau: f64,
    /// ACT halting threshold offset; unused by the other methods.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    #[serde(default)]
    pub checkpoint_path: Option<PathBuf>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if self.tau < 0.0 {
            return Err(Error::invalid(format!("tau must be >= 0, got {}", self.tau)));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps must be >= 1"));
        }
        if self.state_dim == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid(
                "state_dim, batch_size, and epochs must be >= 1",
            ));
        }
        if self.n_train == 0 || self.n_eval == 0 {
            return Err(Error::invalid("n_train and n_eval must be >= 1"));
        }
        if self.method == Method::Act && !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid(format!(
                "epsilon must lie in (0, 1) for act, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

// ── Metrics ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_accuracy: f64,
    pub mean_steps: f64,
    pub mean_rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityBin {
    pub complexity: usize,
    pub mean_steps: f64,
    pub n_samples: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub per_epoch: Vec<EpochMetrics>,
    pub best_accuracy: f64,
    pub best_epoch: usize,
    pub steps_at_best: f64,
    /// Per-complexity step histogram, measured with the best weights.
    pub histogram: Vec<ComplexityBin>,
    /// Halting-soundness audit failures accumulated across epochs (must stay 0).
    pub audit_violations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Stop as soon as the halting criterion allows.
    Halting,
    /// Always run the full step budget.
    Full,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub mode: EvalMode,
    pub epsilon: f64,
    /// For the differentiable method in halting mode: rerun each sample at
    /// full depth and count argmax disagreements.
    pub audit_halting: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub mean_steps: f64,
    pub mean_rho: f64,
    pub n_samples: usize,
    pub histogram: Vec<ComplexityBin>,
    pub audit_violations: Option<usize>,
}

/// Per-sample inference record written as JSON lines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: usize,
    pub method: String,
    pub steps_used: usize,
    pub halted_early: bool,
    pub h: Vec<f64>,
    pub p: Vec<f64>,
    pub intermediate_argmax: Vec<usize>,
    pub final_class: usize,
    pub target_class: usize,
    pub complexity: usize,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

// ── Evaluation ───────────────────────────────────────────────────────────

pub fn evaluate_model(
    params: &CellParams,
    samples: &[Sample],
    method: Method,
    max_steps: usize,
    opts: &EvalOptions,
) -> Result<(EvalSummary, Vec<SampleRecord>)> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let mut records = Vec::with_capacity(samples.len());
    let mut correct = 0usize;
    let mut steps_total = 0usize;
    let mut rho_total = 0.0;
    let mut audit_violations = if method == Method::Dact && opts.mode == EvalMode::Halting && opts.audit_halting
    {
        Some(0usize)
    } else {
        None
    };
    let mut bins: Vec<(usize, usize, usize, usize)> = Vec::new(); // (k, n, steps, correct)

    for (sample_id, sample) in samples.iter().enumerate() {
        let (y, steps_used, halted_early, h, p, intermediates) = match method {
            Method::Dact => {
                let run = run_inference(
                    params,
                    &sample.input,
                    max_steps,
                    opts.mode == EvalMode::Halting,
                )?;
                if let Some(v) = audit_violations.as_mut() {
                    let full = run_inference(params, &sample.input, max_steps, false)?;
                    if argmax(&run.y) != argmax(&full.y) {
                        *v += 1;
                    }
                }
                (
                    run.y,
                    run.steps_used,
                    run.halted_early,
                    run.trace.h,
                    run.trace.p,
                    run.intermediates,
                )
            }
            Method::Act => {
                let run = act_run(params, &sample.input, max_steps, opts.epsilon)?;
                let halted = run.steps_used < max_steps;
                rho_total += act_ponder(&run.trace);
                // The weights play the chain-probability role in act records.
                let weights = run.trace.weights.clone();
                (
                    run.y,
                    run.steps_used,
                    halted,
                    run.trace.h,
                    weights,
                    run.intermediates,
                )
            }
            Method::Fixed => {
                let y = fixed_forward_plain(params, &sample.input, max_steps)?;
                (y.clone(), max_steps, false, Vec::new(), Vec::new(), vec![y])
            }
        };

        let final_class = argmax(&y);
        let is_correct = final_class == sample.target;
        correct += is_correct as usize;
        steps_total += steps_used;
        if method == Method::Dact {
            rho_total += p.iter().sum::<f64>();
        }

        match bins.binary_search_by_key(&sample.complexity, |(k, ..)| *k) {
            Ok(i) => {
                bins[i].1 += 1;
                bins[i].2 += steps_used;
                bins[i].3 += is_correct as usize;
            }
            Err(i) => bins.insert(i, (sample.complexity, 1, steps_used, is_correct as usize)),
        }

        records.push(SampleRecord {
            sample_id,
            method: method.name().to_string(),
            steps_used,
            halted_early,
            intermediate_argmax: intermediates.iter().map(|y| argmax(y)).collect(),
            h,
            p,
            final_class,
            target_class: sample.target,
            complexity: sample.complexity,
        });
    }

    let n = samples.len();
    let histogram = bins
        .into_iter()
        .map(|(k, count, steps, corr)| ComplexityBin {
            complexity: k,
            mean_steps: steps as f64 / count as f64,
            n_samples: count,
            accuracy: corr as f64 / count as f64,
        })
        .collect();
    Ok((
        EvalSummary {
            accuracy: correct as f64 / n as f64,
            mean_steps: steps_total as f64 / n as f64,
            mean_rho: rho_total / n as f64,
            n_samples: n,
            histogram,
            audit_violations,
        },
        records,
    ))
}

// ── Training ─────────────────────────────────────────────────────────────

struct BatchLoss {
    loss: NodeId,
    cell: crate::cells::CellNodes,
}

/// Builds the recorded loss for one minibatch. The objective is the batch
/// mean of the per-sample task loss plus `tau` times the batch mean of the
/// per-sample ponder term (absent for the fixed method).
fn build_batch(
    g: &mut Graph,
    params: &CellParams,
    batch: &[&Sample],
    config: &TrainConfig,
) -> Result<BatchLoss> {
    let cell = params.register(g);
    let neg_one = g.constant(-1.0);
    let mut sum_ce: Option<NodeId> = None;
    let mut sum_penalty: Option<NodeId> = None;

    for sample in batch {
        let input = g.leaf(Tensor::vector(sample.input.clone()));
        let (y, penalty): (NodeId, Option<NodeId>) = match config.method {
            Method::Dact => {
                let run = dact_forward(g, &cell, input, config.max_steps)?;
                (run.y, Some(run.rho))
            }
            Method::Act => {
                let run = act_forward(g, &cell, input, config.max_steps, config.epsilon)?;
                (run.y, Some(run.ponder))
            }
            Method::Fixed => {
                let y = crate::cells::fixed_forward(g, &cell, input, config.max_steps)?;
                (y, None)
            }
        };
        let picked = g.index_select(y, sample.target)?;
        let log = g.log(picked)?;
        let ce = g.scalar_mul(log, neg_one)?;
        sum_ce = Some(match sum_ce {
            None => ce,
            Some(s) => g.add(s, ce)?,
        });
        if let Some(pen) = penalty {
            sum_penalty = Some(match sum_penalty {
                None => pen,
                Some(s) => g.add(s, pen)?,
            });
        }
    }

    let inv_b = g.constant(1.0 / batch.len() as f64);
    let mut loss = g.scalar_mul(sum_ce.expect("non-empty batch"), inv_b)?;
    if let Some(pen_sum) = sum_penalty {
        let tau_over_b = g.constant(config.tau / batch.len() as f64);
        let penalty = g.scalar_mul(pen_sum, tau_over_b)?;
        loss = g.add(loss, penalty)?;
    }
    Ok(BatchLoss { loss, cell })
}

/// The evaluation mode each method deploys with.
fn deployment_mode(method: Method) -> EvalMode {
    match method {
        Method::Dact => EvalMode::Halting,
        // ACT halts by its own threshold rule regardless of mode; the fixed
        // baseline always runs the full budget.
        Method::Act | Method::Fixed => EvalMode::Full,
    }
}

/// Minibatch Adam on the composite objective, evaluating after every epoch
/// and keeping the weights with the highest evaluation accuracy. Data is
/// generated from the config's task spec.
pub fn train_model(config: &TrainConfig) -> Result<(CellParams, RunMetrics)> {
    train_model_on(config, None)
}

/// The deterministic train/eval sets a config trains against: generated from
/// the task spec (or taken from `data`) and split stratified by complexity.
/// Exposed so audits can reconstruct exactly the split a run evaluated on.
pub fn config_datasets(
    config: &TrainConfig,
    data: Option<Vec<Sample>>,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let total = config.n_train + config.n_eval;
    let data = match data {
        Some(samples) => samples,
        None => generate(&config.task, total)?,
    };
    let fraction = config.n_train as f64 / total as f64;
    // Distinct derived seed so the split shuffle is independent of init.
    split(&data, fraction, config.seed.wrapping_add(1))
}

/// Like [`train_model`] but optionally trains on pre-generated samples
/// (e.g. a dataset file) instead of generating from the task spec. The
/// train/eval split keeps the configured proportions either way.
pub fn train_model_on(
    config: &TrainConfig,
    data: Option<Vec<Sample>>,
) -> Result<(CellParams, RunMetrics)> {
    config.validate()?;
    let input_dim = config.task.input_dim();
    let mut params = init_params(input_dim, config.state_dim, config.task.n_classes, config.seed)?;

    let (train_set, eval_set) = config_datasets(config, data)?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    let mut adam_t = 0u64;

    let mut per_epoch = Vec::with_capacity(config.epochs);
    let mut best_accuracy = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut steps_at_best = 0.0;
    let mut best_params = params.clone();
    let mut audit_violations = 0usize;

    for epoch in 1..=config.epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in indices.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|i| &train_set[*i]).collect();
            let mut g = Graph::new();
            let built = build_batch(&mut g, &params, &batch, config)?;
            let loss_value = g.value(built.loss).item();
            if !loss_value.is_finite() {
                return Err(Error::non_finite(format!(
                    "loss {loss_value} at epoch {epoch}, batch {batch_idx}"
                )));
            }
            g.backward(built.loss)?;
            let grads: Vec<Tensor> = built
                .cell
                .nodes
                .iter()
                .map(|id| g.gradient(*id).expect("backward populates every node").clone())
                .collect();
            adam_t += 1;
            params.store_mut().adam_step(&grads, &config.adam, adam_t)?;
            loss_sum += loss_value * batch.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;

        // The soundness audit reruns every sample at full depth, so it runs
        // once on the final best weights rather than every epoch.
        let opts = EvalOptions {
            mode: deployment_mode(config.method),
            epsilon: config.epsilon,
            audit_halting: false,
        };
        let (summary, _) = evaluate_model(&params, &eval_set, config.method, config.max_steps, &opts)?;

        // The differentiable method reports the full-unroll ponder cost.
        let mean_rho = if config.method == Method::Dact {
            let full_opts = EvalOptions {
                mode: EvalMode::Full,
                epsilon: config.epsilon,
                audit_halting: false,
            };
            let (full, _) =
                evaluate_model(&params, &eval_set, config.method, config.max_steps, &full_opts)?;
            full.mean_rho
        } else {
            summary.mean_rho
        };

        per_epoch.push(EpochMetrics {
            epoch,
            train_loss,
            eval_accuracy: summary.accuracy,
            mean_steps: summary.mean_steps,
            mean_rho,
        });

        // Highest accuracy wins; among equal-accuracy checkpoints the one
        // using fewer steps is strictly better on the accuracy/computation
        // trade-off, so later cheaper checkpoints replace earlier ones.
        let better = summary.accuracy > best_accuracy
            || (summary.accuracy == best_accuracy && summary.mean_steps < steps_at_best);
        if better {
            best_accuracy = summary.accuracy;
            best_epoch = epoch;
            steps_at_best = summary.mean_steps;
            best_params = params.clone();
        }
    }

    let opts = EvalOptions {
        mode: deployment_mode(config.method),
        epsilon: config.epsilon,
        audit_halting: config.method == Method::Dact,
    };
    let (best_summary, _) =
        evaluate_model(&best_params, &eval_set, config.method, config.max_steps, &opts)?;
    audit_violations += best_summary.audit_violations.unwrap_or(0);

    if let Some(path) = &config.checkpoint_path {
        best_params.store().save(path)?;
    }

    Ok((
        best_params,
        RunMetrics {
            per_epoch,
            best_accuracy,
            best_epoch,
            steps_at_best,
            histogram: best_summary.histogram,
            audit_violations,
        },
    ))
}

// ── Sweep ────────────────────────────────────────────────────────────────

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub base: TrainConfig,
    pub taus: Vec<f64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub tau: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub mean_steps: f64,
    pub status: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TauMean {
    pub method: String,
    pub tau: f64,
    pub mean_accuracy: f64,
    pub mean_steps: f64,
    pub n_runs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub tau: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub epoch: EpochMetrics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistogramRow {
    pub method: String,
    pub tau: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub bin: ComplexityBin,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    /// Unix timestamp; the single field excluded from reproducibility checks.
    pub generated_at_unix: u64,
    pub config: SweepConfig,
    pub rows: Vec<SweepRow>,
    pub tau_means: Vec<TauMean>,
}

pub struct SweepOutput {
    pub summary: SweepSummary,
    pub metrics: Vec<MetricsRow>,
    pub histograms: Vec<HistogramRow>,
}

/// Trains every (method, tau, seed) combination. The fixed baseline ignores
/// tau, so it is trained once per seed and its row replicated across the tau
/// grid. Per-run failures become rows with an error status and the sweep
/// continues.
pub fn sweep(config: &SweepConfig) -> Result<SweepOutput> {
    if config.taus.is_empty() || config.seeds.is_empty() || config.methods.is_empty() {
        return Err(Error::invalid("taus, seeds, and methods must be non-empty"));
    }
    config.base.validate()?;

    // Unique trainings: fixed collapses the tau axis.
    let mut specs: Vec<(Method, f64, u64)> = Vec::new();
    for &method in &config.methods {
        let taus: &[f64] = if method == Method::Fixed { &config.taus[..1] } else { &config.taus };
        for &tau in taus {
            for &seed in &config.seeds {
                specs.push((method, tau, seed));
            }
        }
    }

    let jobs = config.jobs.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;

    type RunOutcome = std::result::Result<(CellParams, RunMetrics), String>;
    let results: Vec<RunOutcome> = pool.install(|| {
        use rayon::prelude::*;
        specs
            .par_iter()
            .map(|(method, tau, seed)| {
                let mut run_cfg = config.base.clone();
                run_cfg.method = *method;
                run_cfg.tau = if *method == Method::Fixed { 0.0 } else { *tau };
                run_cfg.seed = *seed;
                run_cfg.checkpoint_path = None;
                train_model(&run_cfg).map_err(|e| e.to_string())
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut metrics = Vec::new();
    let mut histograms = Vec::new();
    for ((method, tau, seed), outcome) in specs.iter().zip(&results) {
        let replicate_taus: Vec<f64> = if *method == Method::Fixed {
            config.taus.clone()
        } else {
            vec![*tau]
        };
        for rep_tau in replicate_taus {
            match outcome {
                Ok((_, run)) => {
                    rows.push(SweepRow {
                        method: method.name().to_string(),
                        tau: rep_tau,
                        seed: *seed,
                        accuracy: run.best_accuracy,
                        mean_steps: run.steps_at_best,
                        status: "ok".to_string(),
                    });
                    for em in &run.per_epoch {
                        metrics.push(MetricsRow {
                            method: method.name().to_string(),
                            tau: rep_tau,
                            seed: *seed,
                            epoch: em.clone(),
                        });
                    }
                    for bin in &run.histogram {
                        histograms.push(HistogramRow {
                            method: method.name().to_string(),
                            tau: rep_tau,
                            seed: *seed,
                            bin: bin.clone(),
                        });
                    }
                }
                Err(msg) => rows.push(SweepRow {
                    method: method.name().to_string(),
                    tau: rep_tau,
                    seed: *seed,
                    accuracy: f64::NAN,
                    mean_steps: f64::NAN,
                    status: format!("error: {msg}"),
                }),
            }
        }
    }
    // Stable presentation order regardless of the spec iteration above.
    rows.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.tau.partial_cmp(&b.tau).unwrap())
            .then(a.seed.cmp(&b.seed))
    });

    let mut tau_means = Vec::new();
    for &method in &config.methods {
        for &tau in &config.taus {
            let ok_rows: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.method == method.name() && r.tau == tau && r.status == "ok")
                .collect();
            if ok_rows.is_empty() {
                continue;
            }
            let n = ok_rows.len() as f64;
            tau_means.push(TauMean {
                method: method.name().to_string(),
                tau,
                mean_accuracy: ok_rows.iter().map(|r| r.accuracy).sum::<f64>() / n,
                mean_steps: ok_rows.iter().map(|r| r.mean_steps).sum::<f64>() / n,
                n_runs: ok_rows.len(),
            });
        }
    }

    Ok(SweepOutput {
        summary: SweepSummary {
            generated_at_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config: config.clone(),
            rows,
            tau_means,
        },
        metrics,
        histograms,
    })
}

// ── Serialization helpers ────────────────────────────────────────────────

/// Metrics CSV: a `# config:` comment, a header, then one row per epoch.
pub fn metrics_csv(config_json: &str, rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!("# config: {config_json}\n"));
    out.push_str("method,tau,seed,epoch,loss,accuracy,mean_steps,mean_rho\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.method,
            r.tau,
            r.seed,
            r.epoch.epoch,
            r.epoch.train_loss,
            r.epoch.eval_accuracy,
            r.epoch.mean_steps,
            r.epoch.mean_rho
        ));
    }
    out
}

/// Histogram CSV: one row per (run, complexity) bin.
pub fn histogram_csv(config_json: &str, rows: &[HistogramRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!("# config: {config_json}\n"));
    out.push_str("method,tau,seed,complexity,mean_steps,n_samples,accuracy\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method,
            r.tau,
            r.seed,
            r.bin.complexity,
            r.bin.mean_steps,
            r.bin.n_samples,
            r.bin.accuracy
        ));
    }
    out
}

/// Parses rows written by [`histogram_csv`], skipping comment lines.
pub fn parse_histogram_csv(text: &str) -> Result<Vec<HistogramRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("method,") {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            return Err(Error::DatasetFormat(format!(
                "histogram CSV line {}: expected 7 columns, got {}",
                i + 1,
                parts.len()
            )));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::DatasetFormat(format!("line {}: bad {what} {s:?}", i + 1)))
        };
        let parse_u = |s: &str, what: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| Error::DatasetFormat(format!("line {}: bad {what} {s:?}", i + 1)))
        };
        rows.push(HistogramRow {
            method: parts[0].to_string(),
            tau: parse_f(parts[1], "tau")?,
            seed: parse_u(parts[2], "seed")? as u64,
            bin: ComplexityBin {
                complexity: parse_u(parts[3], "complexity")?,
                mean_steps: parse_f(parts[4], "mean_steps")?,
                n_samples: parse_u(parts[5], "n_samples")?,
                accuracy: parse_f(parts[6], "accuracy")?,
            },
        });
    }
    Ok(rows)
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = ranks(xs);
    let ry = ranks(ys);
    pearson(&rx, &ry)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|a, b| v[*a].partial_cmp(&v[*b]).unwrap());
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx).powi(2);
        vy += (y - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_output(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, contents)?;
    Ok(())
}
