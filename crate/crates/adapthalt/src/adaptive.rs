//! The differentiable halting mechanism: a monotone chain of halting
//! probabilities, a running convex combination of intermediate answers, the
//! ponder regularizer, and the inference-time stop criterion with its
//! lower/upper bounds.
//!
//! Training always unrolls every step on the tape; halting only ever happens
//! at inference, where the bounds certify that the remaining steps cannot
//! change the argmax.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::cells::{cell_step, cell_step_plain, CellNodes, CellParams};
use crate::error::{Error, Result};

/// Slack tolerated when validating values that are mathematically confined to
/// [0, 1] but arrive through floating-point arithmetic.
pub const UNIT_SLACK: f64 = 1e-12;

// ── Traces and accumulator ───────────────────────────────────────────────

/// Per-step halting signals `h[n]` and the derived chain `p[n] = prod h[..=n]`.
/// Index 0 holds step 1; the implicit step-0 values are both 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaltingTrace {
    pub h: Vec<f64>,
    pub p: Vec<f64>,
}

impl HaltingTrace {
    /// Builds the chain from raw halting signals, validating the unit range.
    pub fn from_signals(h: &[f64]) -> Result<HaltingTrace> {
        let mut p = Vec::with_capacity(h.len());
        let mut carry = 1.0;
        for (i, &hn) in h.iter().enumerate() {
            carry = update_p(carry, hn)
                .map_err(|e| Error::invalid(format!("step {}: {e}", i + 1)))?;
            p.push(carry);
        }
        Ok(HaltingTrace { h: h.to_vec(), p })
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// `p[n-1]` with the implicit `p[0] = 1`, for 1-based step `n`.
    pub fn carry_into(&self, n: usize) -> f64 {
        if n <= 1 {
            1.0
        } else {
            self.p[n - 2]
        }
    }
}

/// Running combined answer plus the chain value that will weight the next
/// step's contribution.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatorState {
    /// Combined answer; a probability vector once `n >= 1`.
    pub a: Vec<f64>,
    /// `p[n-1]`, the weight the next intermediate answer will receive.
    pub p_carry: f64,
    /// Steps accumulated so far.
    pub n: usize,
}

impl AccumulatorState {
    /// The zero start state: `a` all zeros, carry 1.
    pub fn start(n_classes: usize) -> AccumulatorState {
        AccumulatorState {
            a: vec![0.0; n_classes],
            p_carry: 1.0,
            n: 0,
        }
    }
}

/// Ponder penalty term: the cost itself and the time-penalty weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PonderTerm {
    pub rho: f64,
    pub tau: f64,
}

impl PonderTerm {
    pub fn new(rho: f64, tau: f64) -> Result<PonderTerm> {
        if tau < 0.0 {
            return Err(Error::invalid(format!("time penalty must be >= 0, got {tau}")));
        }
        if rho < 0.0 {
            return Err(Error::invalid(format!("ponder cost must be >= 0, got {rho}")));
        }
        Ok(PonderTerm { rho, tau })
    }
}

/// Outcome of evaluating the stop criterion after some step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HaltDecision {
    pub halt: bool,
    /// Current top class.
    pub top_class: usize,
    /// Second-best class.
    pub runner_up: usize,
    /// Worst-case final probability of the top class.
    pub lower_bound: f64,
    /// Best-case final probability of the runner-up.
    pub upper_bound: f64,
    /// Remaining steps.
    pub d: usize,
}

// ── Scalar operations ────────────────────────────────────────────────────

fn check_unit(name: &str, v: f64) -> Result<f64> {
    if !v.is_finite() || v < -UNIT_SLACK || v > 1.0 + UNIT_SLACK {
        return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(v.clamp(0.0, 1.0))
}

/// Chain update `p_n = h_n * p_(n-1)`. Inputs outside [0, 1] beyond a 1e-12
/// slack are rejected; in-range inputs keep the chain monotone bit for bit.
pub fn update_p(p_prev: f64, h_n: f64) -> Result<f64> {
    let p = check_unit("chain probability", p_prev)?;
    let h = check_unit("halting signal", h_n)?;
    Ok(h * p)
}

/// One accumulator update: `a <- y * p_carry + a * (1 - p_carry)`. The carry
/// itself is advanced separately via [`update_p`].
pub fn accumulate(acc: &AccumulatorState, y: &[f64]) -> Result<AccumulatorState> {
    if y.len() != acc.a.len() {
        return Err(Error::ShapeMismatch {
            primitive: "accumulate",
            details: format!("answer has {} classes, accumulator {}", y.len(), acc.a.len()),
        });
    }
    let sum: f64 = y.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "intermediate answer must lie on the simplex, sums to {sum}"
        )));
    }
    let pc = acc.p_carry;
    let a = y
        .iter()
        .zip(&acc.a)
        .map(|(yv, av)| yv * pc + av * (1.0 - pc))
        .collect();
    Ok(AccumulatorState {
        a,
        p_carry: pc,
        n: acc.n + 1,
    })
}

/// The weights `beta` such that the unrolled accumulator equals
/// `sum_i beta_i * y_i`. Computed by the backward-scaling recurrence:
/// `beta_n = p_(n-1)` and every earlier weight picks up a factor
/// `(1 - p_(n-1))` at step n.
pub fn implicit_weights(trace: &HaltingTrace, n_steps: usize) -> Result<Vec<f64>> {
    if n_steps == 0 {
        return Err(Error::invalid("weight count must be >= 1"));
    }
    if trace.is_empty() {
        return Err(Error::invalid("empty halting trace"));
    }
    // Only p[0] .. p[n_steps-2] are consumed (carry values).
    if trace.len() + 1 < n_steps {
        return Err(Error::invalid(format!(
            "trace has {} entries, need at least {} for {} steps",
            trace.len(),
            n_steps - 1,
            n_steps
        )));
    }
    let mut beta: Vec<f64> = Vec::with_capacity(n_steps);
    for n in 1..=n_steps {
        let carry = trace.carry_into(n);
        for b in beta.iter_mut() {
            *b *= 1.0 - carry;
        }
        beta.push(carry);
    }
    Ok(beta)
}

/// Ponder cost: the sum of the chain probabilities over all steps.
pub fn ponder_cost(trace: &HaltingTrace, n_steps: usize) -> Result<f64> {
    if trace.len() < n_steps {
        return Err(Error::invalid(format!(
            "trace has {} entries, need {}",
            trace.len(),
            n_steps
        )));
    }
    Ok(trace.p[..n_steps].iter().sum())
}

/// Composite training objective: task loss plus `tau` times the ponder cost.
pub fn composite_loss(task_loss: f64, rho: f64, tau: f64) -> Result<f64> {
    if tau < 0.0 {
        return Err(Error::invalid(format!("time penalty must be >= 0, got {tau}")));
    }
    Ok(task_loss + tau * rho)
}

/// Worst-case final probability of the current top class after `d` more
/// steps: every future answer assigns it zero mass.
pub fn bound_top(pr_top: f64, p_n: f64, d: usize) -> f64 {
    pr_top * (1.0 - p_n).powi(d as i32)
}

/// Best-case final probability of the runner-up after `d` more steps: every
/// future answer assigns it full mass.
pub fn bound_runner_up(pr_ru: f64, p_n: f64, d: usize) -> f64 {
    pr_ru + p_n * d as f64
}

/// Indices of the largest and second-largest entries, lowest index winning
/// ties in both positions.
pub(crate) fn top_two(a: &[f64]) -> (usize, usize) {
    debug_assert!(a.len() >= 2);
    let mut top = 0;
    for (i, v) in a.iter().enumerate().skip(1) {
        if *v > a[top] {
            top = i;
        }
    }
    let mut ru = usize::MAX;
    for (i, v) in a.iter().enumerate() {
        if i == top {
            continue;
        }
        if ru == usize::MAX || *v > a[ru] {
            ru = i;
        }
    }
    (top, ru)
}

/// The stop criterion: halt once the top class's worst case still beats the
/// runner-up's best case.
///
/// With `p_n > 0` the comparison is strict, so a boundary tie can never be
/// broken against the current top class by a later step. With `p_n == 0` the
/// answer is frozen outright and halting is always sound, ties included.
pub fn should_halt(acc: &AccumulatorState, p_n: f64, d: usize) -> Result<HaltDecision> {
    if acc.a.len() < 2 {
        return Err(Error::invalid(format!(
            "halting needs at least 2 classes, got {}",
            acc.a.len()
        )));
    }
    if acc.n == 0 {
        return Err(Error::invalid("halting evaluated before any step"));
    }
    let p_n = check_unit("chain probability", p_n)?;
    let (top, ru) = top_two(&acc.a);
    let lower = bound_top(acc.a[top], p_n, d);
    let upper = bound_runner_up(acc.a[ru], p_n, d);
    let halt = if p_n == 0.0 { lower >= upper } else { lower > upper };
    Ok(HaltDecision {
        halt,
        top_class: top,
        runner_up: ru,
        lower_bound: lower,
        upper_bound: upper,
        d,
    })
}

// ── Recorded forward pass ────────────────────────────────────────────────

/// Node handles produced by unrolling the mechanism on a graph.
#[derive(Debug, Clone)]
pub struct DactGraphRun {
    /// Final combined answer (the accumulator after the last step).
    pub y: NodeId,
    /// Ponder cost node.
    pub rho: NodeId,
    pub h_nodes: Vec<NodeId>,
    pub p_nodes: Vec<NodeId>,
    /// Per-step intermediate answers.
    pub y_step_nodes: Vec<NodeId>,
}

impl DactGraphRun {
    pub fn trace(&self, g: &Graph) -> HaltingTrace {
        HaltingTrace {
            h: self.h_nodes.iter().map(|n| g.value(*n).item()).collect(),
            p: self.p_nodes.iter().map(|n| g.value(*n).item()).collect(),
        }
    }

    pub fn intermediates(&self, g: &Graph) -> Vec<Vec<f64>> {
        self.y_step_nodes
            .iter()
            .map(|n| g.value(*n).data().to_vec())
            .collect()
    }
}

/// Unrolls all `n_steps` cell applications on the tape, chaining the
/// accumulator and the halting chain, and sums the chain into the ponder
/// cost. Differentiable end to end.
pub fn dact_forward(
    g: &mut Graph,
    cell: &CellNodes,
    input: NodeId,
    n_steps: usize,
) -> Result<DactGraphRun> {
    if n_steps == 0 {
        return Err(Error::invalid("step count must be >= 1"));
    }
    let mut state = g.leaf(Tensor::zeros(&[cell.state_dim]));
    let mut acc = g.leaf(Tensor::zeros(&[cell.n_classes]));
    let mut carry = g.constant(1.0);

    let mut h_nodes = Vec::with_capacity(n_steps);
    let mut p_nodes = Vec::with_capacity(n_steps);
    let mut y_step_nodes = Vec::with_capacity(n_steps);
    let mut rho: Option<NodeId> = None;

    for _ in 0..n_steps {
        let step = cell_step(g, cell, state, input)?;
        state = step.state;
        y_step_nodes.push(step.y);
        h_nodes.push(step.h);

        // a <- y * p_carry + a * (1 - p_carry)
        let weighted_y = g.scalar_mul(step.y, carry)?;
        let carry_inv = g.one_minus(carry)?;
        let kept = g.scalar_mul(acc, carry_inv)?;
        acc = g.add(weighted_y, kept)?;

        // p <- h * p
        carry = g.mul(step.h, carry)?;
        p_nodes.push(carry);
        rho = Some(match rho {
            None => carry,
            Some(r) => g.add(r, carry)?,
        });
    }

    Ok(DactGraphRun {
        y: acc,
        rho: rho.expect("n_steps >= 1"),
        h_nodes,
        p_nodes,
        y_step_nodes,
    })
}

/// Full training-style forward pass for one input on a fresh tape: all steps
/// executed, no halting. Returns the combined answer, the ponder cost, the
/// halting trace, and every intermediate answer.
pub fn run_training_forward(
    params: &CellParams,
    input: &[f64],
    n_steps: usize,
) -> Result<(Vec<f64>, f64, HaltingTrace, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let cell = params.register(&mut g);
    let input_node = g.leaf(Tensor::vector(input.to_vec()));
    let run = dact_forward(&mut g, &cell, input_node, n_steps)?;
    Ok((
        g.value(run.y).data().to_vec(),
        g.value(run.rho).item(),
        run.trace(&g),
        run.intermediates(&g),
    ))
}

// ── Inference ────────────────────────────────────────────────────────────

/// Result of an inference pass.
#[derive(Debug, Clone)]
pub struct InferenceRun {
    /// Combined answer at the step inference stopped.
    pub y: Vec<f64>,
    pub steps_used: usize,
    pub halted_early: bool,
    pub trace: HaltingTrace,
    /// Intermediate answers for the executed steps.
    pub intermediates: Vec<Vec<f64>>,
    /// The stop-criterion evaluation after each executed step.
    pub decisions: Vec<HaltDecision>,
}

/// Sequential evaluation with no gradient recording. After each step the stop
/// criterion is evaluated with the remaining-step count; with halting
/// disabled all `n_steps` run and the result is bit-identical to the recorded
/// forward pass.
pub fn run_inference(
    params: &CellParams,
    input: &[f64],
    n_steps: usize,
    halting_enabled: bool,
) -> Result<InferenceRun> {
    if n_steps == 0 {
        return Err(Error::invalid("step count must be >= 1"));
    }
    let mut state = params.zero_state();
    let mut acc = AccumulatorState::start(params.n_classes);
    let mut h = Vec::with_capacity(n_steps);
    let mut p = Vec::with_capacity(n_steps);
    let mut intermediates = Vec::with_capacity(n_steps);
    let mut decisions = Vec::with_capacity(n_steps);
    let mut halted_early = false;

    for n in 1..=n_steps {
        let step = cell_step_plain(params, &state, input)?;
        state = step.state;
        // Same expression order as the recorded path: blend, then advance p.
        let pc = acc.p_carry;
        let a: Vec<f64> = step
            .y
            .iter()
            .zip(&acc.a)
            .map(|(yv, av)| yv * pc + av * (1.0 - pc))
            .collect();
        let p_n = step.h * pc;
        acc = AccumulatorState {
            a,
            p_carry: p_n,
            n,
        };
        h.push(step.h);
        p.push(p_n);
        intermediates.push(step.y);

        let decision = should_halt(&acc, p_n, n_steps - n)?;
        decisions.push(decision);
        if halting_enabled && decision.halt && n < n_steps {
            halted_early = true;
            break;
        }
    }

    Ok(InferenceRun {
        y: acc.a,
        steps_used: acc.n,
        halted_early,
        trace: HaltingTrace { h, p },
        intermediates,
        decisions,
    })
}
