//! Graves-style adaptive computation time baseline. Halting happens when the
//! cumulative halting activations reach `1 - epsilon`; the last combination
//! weight is replaced by the remainder so the weights sum to exactly one —
//! the piecewise, non-differentiable fix-up this baseline is known for.
//!
//! To keep the comparison clean, the combination is applied to the per-step
//! output distributions rather than hidden states, so the halting rule is the
//! only thing that differs from the differentiable mechanism.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::cells::{cell_step, cell_step_plain, CellNodes, CellParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActTrace {
    /// Halting activations for the executed steps.
    pub h: Vec<f64>,
    /// First step (1-based) where the running sum reached `1 - epsilon`, or
    /// the step budget if it never did.
    pub n_halt: usize,
    /// `1 - sum(h[..n_halt-1])`.
    pub remainder: f64,
    /// Combination weights: `h[i]` before the halt step, the remainder at it,
    /// zero after.
    pub weights: Vec<f64>,
}

/// The halting rule on raw activations. Returns the decision without running
/// a model, which makes it directly property-testable.
///
/// The remainder is computed from the same left-to-right partial sum used for
/// the threshold test, which is what makes the weight vector sum to exactly
/// one in floating point, not merely up to rounding.
pub fn act_weights(h: &[f64], epsilon: f64) -> Result<ActTrace> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    if h.is_empty() {
        return Err(Error::invalid("empty activation sequence"));
    }
    let n_steps = h.len();
    let threshold = 1.0 - epsilon;
    let mut partial = 0.0;
    let mut n_halt = n_steps;
    for (i, &hi) in h.iter().enumerate() {
        let next = partial + hi;
        if next >= threshold {
            n_halt = i + 1;
            break;
        }
        // The halting step's own activation never enters the remainder sum,
        // including when the budget runs out before the threshold.
        if i + 1 < n_steps {
            partial = next;
        }
    }
    let remainder = 1.0 - partial;
    let mut weights = vec![0.0; n_steps];
    weights[..n_halt - 1].copy_from_slice(&h[..n_halt - 1]);
    weights[n_halt - 1] = remainder;
    Ok(ActTrace {
        h: h.to_vec(),
        n_halt,
        remainder,
        weights,
    })
}

/// Ponder cost of a run: steps used plus the remainder.
pub fn act_ponder(trace: &ActTrace) -> f64 {
    trace.n_halt as f64 + trace.remainder
}

#[derive(Debug, Clone)]
pub struct ActRun {
    /// Weighted combination of the executed steps' answers.
    pub y: Vec<f64>,
    pub steps_used: usize,
    pub trace: ActTrace,
    pub intermediates: Vec<Vec<f64>>,
}

/// Plain-path run: execute steps until the threshold rule fires or the budget
/// is exhausted, then combine the executed answers.
pub fn act_run(
    params: &CellParams,
    input: &[f64],
    n_steps: usize,
    epsilon: f64,
) -> Result<ActRun> {
    if n_steps == 0 {
        return Err(Error::invalid("step count must be >= 1"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    let threshold = 1.0 - epsilon;
    let mut state = params.zero_state();
    let mut h = Vec::new();
    let mut intermediates = Vec::new();
    let mut partial = 0.0;
    let mut halted_at = None;
    for i in 0..n_steps {
        let step = cell_step_plain(params, &state, input)?;
        state = step.state;
        h.push(step.h);
        intermediates.push(step.y);
        let next = partial + step.h;
        if next >= threshold {
            halted_at = Some(i + 1);
            break;
        }
        if i + 1 < n_steps {
            partial = next;
        }
    }
    let executed = halted_at.unwrap_or(n_steps);
    let trace = ActTrace {
        n_halt: executed,
        remainder: 1.0 - partial,
        weights: {
            let mut w = vec![0.0; executed];
            w[..executed - 1].copy_from_slice(&h[..executed - 1]);
            w[executed - 1] = 1.0 - partial;
            w
        },
        h: h.clone(),
    };
    let n_classes = params.n_classes;
    let mut y = vec![0.0; n_classes];
    for (w, yi) in trace.weights.iter().zip(&intermediates) {
        for (acc, v) in y.iter_mut().zip(yi) {
            *acc += w * v;
        }
    }
    Ok(ActRun {
        y,
        steps_used: executed,
        trace,
        intermediates,
    })
}

/// Recorded-path run for training. The halt step is decided from cached
/// activation values during construction; gradient flows through the weights
/// actually used, including the remainder node.
#[derive(Debug, Clone)]
pub struct ActGraphRun {
    pub y: NodeId,
    /// Ponder node: steps-used constant plus the remainder node.
    pub ponder: NodeId,
    pub steps_used: usize,
    pub h_nodes: Vec<NodeId>,
    pub y_step_nodes: Vec<NodeId>,
}

pub fn act_forward(
    g: &mut Graph,
    cell: &CellNodes,
    input: NodeId,
    n_steps: usize,
    epsilon: f64,
) -> Result<ActGraphRun> {
    if n_steps == 0 {
        return Err(Error::invalid("step count must be >= 1"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    let threshold = 1.0 - epsilon;
    let mut state = g.leaf(Tensor::zeros(&[cell.state_dim]));
    let mut h_nodes = Vec::new();
    let mut y_step_nodes = Vec::new();
    let mut partial_node: Option<NodeId> = None;
    let mut partial = 0.0;
    let mut halted_at = None;

    for i in 0..n_steps {
        let step = cell_step(g, cell, state, input)?;
        state = step.state;
        let h_val = g.value(step.h).item();
        h_nodes.push(step.h);
        y_step_nodes.push(step.y);
        if partial + h_val >= threshold {
            halted_at = Some(i + 1);
            break;
        }
        if i + 1 < n_steps {
            partial += h_val;
            partial_node = Some(match partial_node {
                None => step.h,
                Some(prev) => g.add(prev, step.h)?,
            });
        }
    }
    let executed = halted_at.unwrap_or(n_steps);

    // remainder = 1 - sum of pre-halt activations (1 exactly when none).
    let remainder = match partial_node {
        None => g.constant(1.0),
        Some(sum) => g.one_minus(sum)?,
    };

    let mut y = g.scalar_mul(y_step_nodes[executed - 1], remainder)?;
    for i in 0..executed - 1 {
        let term = g.scalar_mul(y_step_nodes[i], h_nodes[i])?;
        y = g.add(y, term)?;
    }

    let steps_const = g.constant(executed as f64);
    let ponder = g.add(steps_const, remainder)?;

    Ok(ActGraphRun {
        y,
        ponder,
        steps_used: executed,
        h_nodes,
        y_step_nodes,
    })
}
