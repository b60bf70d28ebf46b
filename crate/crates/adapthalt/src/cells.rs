//! The stepwise submodel: a small gated recurrent cell applied repeatedly to
//! a static input, with a softmax output head and a sigmoid halting head.
//! One set of weights is shared across every step.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Parameter names in registration order. The order is load-bearing: graph
/// leaves, checkpoints, and finite-difference sweeps all follow it.
const PARAM_NAMES: [&str; 10] = [
    "gate_update.weight",
    "gate_update.bias",
    "gate_reset.weight",
    "gate_reset.bias",
    "candidate.weight",
    "candidate.bias",
    "output_head.weight",
    "output_head.bias",
    "halting_head.weight",
    "halting_head.bias",
];

#[derive(Debug, Clone)]
pub struct CellParams {
    store: ParamStore,
    pub input_dim: usize,
    pub state_dim: usize,
    pub n_classes: usize,
}

/// One step's outputs on the plain (non-recording) path.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Probability vector over classes.
    pub y: Vec<f64>,
    /// Halting signal in (0, 1).
    pub h: f64,
    /// Next recurrent state.
    pub state: Vec<f64>,
}

/// Graph node ids for one registered copy of the parameters.
#[derive(Debug, Clone)]
pub struct CellNodes {
    pub nodes: [NodeId; 10],
    pub input_dim: usize,
    pub state_dim: usize,
    pub n_classes: usize,
}

/// One step's node ids on the recorded path.
#[derive(Debug, Clone, Copy)]
pub struct StepNodes {
    pub y: NodeId,
    pub h: NodeId,
    pub state: NodeId,
}

fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Xavier-uniform weights, zero biases, deterministic per seed.
pub fn init_params(
    input_dim: usize,
    state_dim: usize,
    n_classes: usize,
    seed: u64,
) -> Result<CellParams> {
    if input_dim == 0 || state_dim == 0 || n_classes == 0 {
        return Err(Error::invalid(format!(
            "cell dimensions must be >= 1, got input {input_dim}, state {state_dim}, classes {n_classes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let concat_dim = state_dim + input_dim;

    let matrix = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| -> Tensor {
        let bound = xavier_bound(cols, rows);
        let dist = Uniform::new_inclusive(-bound, bound);
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        Tensor::matrix(rows, cols, data).expect("sized by construction")
    };

    // Same order as PARAM_NAMES.
    let tensors = [
        matrix(&mut rng, state_dim, concat_dim),
        Tensor::zeros(&[state_dim]),
        matrix(&mut rng, state_dim, concat_dim),
        Tensor::zeros(&[state_dim]),
        matrix(&mut rng, state_dim, concat_dim),
        Tensor::zeros(&[state_dim]),
        matrix(&mut rng, n_classes, state_dim),
        Tensor::zeros(&[n_classes]),
        matrix(&mut rng, 1, state_dim),
        Tensor::zeros(&[1]),
    ];
    for (name, t) in PARAM_NAMES.iter().zip(tensors) {
        store.insert(name, t)?;
    }
    Ok(CellParams {
        store,
        input_dim,
        state_dim,
        n_classes,
    })
}

impl CellParams {
    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn n_scalars(&self) -> usize {
        self.store.n_scalars()
    }

    /// Rebuilds a `CellParams` from a loaded store, inferring dimensions from
    /// the weight shapes.
    pub fn from_store(store: ParamStore) -> Result<CellParams> {
        for name in PARAM_NAMES {
            if store.get(name).is_none() {
                return Err(Error::CheckpointFormat(format!(
                    "missing parameter {name:?}"
                )));
            }
        }
        let out = store.get("output_head.weight").unwrap();
        let gate = store.get("gate_update.weight").unwrap();
        if out.shape().len() != 2 || gate.shape().len() != 2 {
            return Err(Error::CheckpointFormat("head weights must be matrices".into()));
        }
        let n_classes = out.shape()[0];
        let state_dim = out.shape()[1];
        if gate.shape()[0] != state_dim || gate.shape()[1] <= state_dim {
            return Err(Error::CheckpointFormat(format!(
                "gate weight shape {:?} inconsistent with state dim {state_dim}",
                gate.shape()
            )));
        }
        let input_dim = gate.shape()[1] - state_dim;
        Ok(CellParams {
            store,
            input_dim,
            state_dim,
            n_classes,
        })
    }

    /// Registers every parameter as a graph leaf, in `PARAM_NAMES` order.
    pub fn register(&self, g: &mut Graph) -> CellNodes {
        let mut nodes = [NodeId(0); 10];
        for (slot, entry) in nodes.iter_mut().zip(self.store.entries()) {
            *slot = g.leaf(entry.value.clone());
        }
        CellNodes {
            nodes,
            input_dim: self.input_dim,
            state_dim: self.state_dim,
            n_classes: self.n_classes,
        }
    }

    fn weights(&self) -> [&Tensor; 10] {
        let mut out = [self.store.get(PARAM_NAMES[0]).unwrap(); 10];
        for (slot, name) in out.iter_mut().zip(PARAM_NAMES) {
            *slot = self.store.get(name).unwrap();
        }
        out
    }

    pub fn zero_state(&self) -> Vec<f64> {
        vec![0.0; self.state_dim]
    }
}

impl CellNodes {
    fn w(&self, i: usize) -> NodeId {
        self.nodes[i]
    }
}

/// One recorded cell step: update/reset gates from [state; input], tanh
/// candidate from [reset*state; input], convex state blend, then the two
/// heads.
pub fn cell_step(
    g: &mut Graph,
    cell: &CellNodes,
    state: NodeId,
    input: NodeId,
) -> Result<StepNodes> {
    if g.value(state).len() != cell.state_dim || g.value(input).len() != cell.input_dim {
        return Err(Error::ShapeMismatch {
            primitive: "cell-step",
            details: format!(
                "state {:?} input {:?} vs dims ({}, {})",
                g.value(state).shape(),
                g.value(input).shape(),
                cell.state_dim,
                cell.input_dim
            ),
        });
    }
    let sx = g.concat(state, input)?;

    let zu = g.matvec(cell.w(0), sx)?;
    let zu = g.add(zu, cell.w(1))?;
    let update = g.sigmoid(zu)?;

    let zr = g.matvec(cell.w(2), sx)?;
    let zr = g.add(zr, cell.w(3))?;
    let reset = g.sigmoid(zr)?;

    let masked = g.mul(reset, state)?;
    let cx = g.concat(masked, input)?;
    let zc = g.matvec(cell.w(4), cx)?;
    let zc = g.add(zc, cell.w(5))?;
    let candidate = g.tanh(zc)?;

    let keep = g.mul(update, state)?;
    let gate_inv = g.one_minus(update)?;
    let fresh = g.mul(gate_inv, candidate)?;
    let next_state = g.add(keep, fresh)?;

    let logits = g.matvec(cell.w(6), next_state)?;
    let logits = g.add(logits, cell.w(7))?;
    let y = g.softmax(logits)?;

    let hz = g.matvec(cell.w(8), next_state)?;
    let hz = g.add(hz, cell.w(9))?;
    let h = g.sigmoid(hz)?;

    Ok(StepNodes {
        y,
        h,
        state: next_state,
    })
}

/// The same arithmetic as [`cell_step`] without recording. Shares the scalar
/// kernels with the graph executor so both paths agree bit for bit.
pub fn cell_step_plain(params: &CellParams, state: &[f64], input: &[f64]) -> Result<StepOutput> {
    use crate::autodiff::{matvec_into, sigmoid, softmax_into};

    if state.len() != params.state_dim || input.len() != params.input_dim {
        return Err(Error::ShapeMismatch {
            primitive: "cell-step",
            details: format!(
                "state len {} input len {} vs dims ({}, {})",
                state.len(),
                input.len(),
                params.state_dim,
                params.input_dim
            ),
        });
    }
    let [wu, bu, wr, br, wc, bc, wo, bo, wh, bh] = params.weights();
    let (s, i, c) = (params.state_dim, params.input_dim, params.n_classes);

    let mut sx = Vec::with_capacity(s + i);
    sx.extend_from_slice(state);
    sx.extend_from_slice(input);

    let mut update = vec![0.0; s];
    matvec_into(wu.data(), s, s + i, &sx, &mut update);
    for (u, b) in update.iter_mut().zip(bu.data()) {
        *u = sigmoid(*u + b);
    }

    let mut reset = vec![0.0; s];
    matvec_into(wr.data(), s, s + i, &sx, &mut reset);
    for (r, b) in reset.iter_mut().zip(br.data()) {
        *r = sigmoid(*r + b);
    }

    let mut cx = Vec::with_capacity(s + i);
    cx.extend(reset.iter().zip(state).map(|(r, st)| r * st));
    cx.extend_from_slice(input);
    let mut candidate = vec![0.0; s];
    matvec_into(wc.data(), s, s + i, &cx, &mut candidate);
    for (cv, b) in candidate.iter_mut().zip(bc.data()) {
        *cv = (*cv + b).tanh();
    }

    let next_state: Vec<f64> = update
        .iter()
        .zip(state)
        .zip(&candidate)
        .map(|((u, st), cand)| u * st + (1.0 - u) * cand)
        .collect();

    let mut logits = vec![0.0; c];
    matvec_into(wo.data(), c, s, &next_state, &mut logits);
    for (l, b) in logits.iter_mut().zip(bo.data()) {
        *l += b;
    }
    let mut y = vec![0.0; c];
    softmax_into(&logits, &mut y);

    let mut hz = vec![0.0; 1];
    matvec_into(wh.data(), 1, s, &next_state, &mut hz);
    let h = sigmoid(hz[0] + bh.data()[0]);

    Ok(StepOutput {
        y,
        h,
        state: next_state,
    })
}

/// Non-adaptive baseline: run exactly `n_steps` recorded steps from the zero
/// state, ignore the halting head, answer with the final step's output.
pub fn fixed_forward(
    g: &mut Graph,
    cell: &CellNodes,
    input: NodeId,
    n_steps: usize,
) -> Result<NodeId> {
    if n_steps == 0 {
        return Err(Error::invalid("step count must be >= 1"));
    }
    let mut state = g.leaf(Tensor::zeros(&[cell.state_dim]));
    let mut y = None;
    for _ in 0..n_steps {
        let step = cell_step(g, cell, state, input)?;
        state = step.state;
        y = Some(step.y);
    }
    Ok(y.expect("n_steps >= 1"))
}

/// Plain-path twin of [`fixed_forward`].
pub fn fixed_forward_plain(params: &CellParams, input: &[f64], n_steps: usize) -> Result<Vec<f64>> {
    if n_steps == 0 {
        return Err(Error::invalid("step count must be >= 1"));
    }
    let mut state = params.zero_state();
    let mut y = Vec::new();
    for _ in 0..n_steps {
        let out = cell_step_plain(params, &state, input)?;
        state = out.state;
        y = out.y;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_params(3, 4, 2, 9).unwrap();
        let b = init_params(3, 4, 2, 9).unwrap();
        for (ea, eb) in a.store().entries().iter().zip(b.store().entries()) {
            assert_eq!(ea.value, eb.value, "{}", ea.name);
        }
        let c = init_params(3, 4, 2, 10).unwrap();
        assert_ne!(
            a.store().get("gate_update.weight"),
            c.store().get("gate_update.weight")
        );
    }

    #[test]
    fn biases_are_zero_and_weights_within_xavier_bound() {
        let p = init_params(5, 7, 3, 123).unwrap();
        for entry in p.store().entries() {
            if entry.name.ends_with(".bias") {
                assert!(entry.value.data().iter().all(|v| *v == 0.0), "{}", entry.name);
            } else {
                let rows = entry.value.shape()[0];
                let cols = entry.value.shape()[1];
                let bound = xavier_bound(cols, rows);
                assert!(
                    entry.value.data().iter().all(|v| v.abs() <= bound),
                    "{} exceeds {bound}",
                    entry.name
                );
            }
        }
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(init_params(0, 4, 2, 1).is_err());
        assert!(init_params(3, 0, 2, 1).is_err());
        assert!(init_params(3, 4, 0, 1).is_err());
    }

    #[test]
    fn zero_weights_give_uniform_y_and_half_h() {
        let mut p = init_params(3, 4, 2, 1).unwrap();
        for name in PARAM_NAMES {
            let zero = Tensor::zeros(p.store().get(name).unwrap().shape());
            p.store_mut().set(name, zero).unwrap();
        }
        let out = cell_step_plain(&p, &[0.0; 4], &[1.0, -1.0, 0.5]).unwrap();
        assert_eq!(out.y, vec![0.5, 0.5]);
        assert_eq!(out.h, 0.5);
        assert_eq!(out.state, vec![0.0; 4]);
    }

    #[test]
    fn step_output_is_simplex_and_open_interval_h() {
        let p = init_params(6, 5, 4, 77).unwrap();
        let input: Vec<f64> = (0..6).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = cell_step_plain(&p, &p.zero_state(), &input).unwrap();
        let sum: f64 = out.y.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
        assert!(out.y.iter().all(|v| *v > 0.0 && *v < 1.0));
        assert!(out.h > 0.0 && out.h < 1.0);
    }

    #[test]
    fn graph_and_plain_paths_agree_bitwise() {
        let p = init_params(4, 6, 3, 42).unwrap();
        let input = vec![0.2, -1.3, 0.8, 0.05];

        let mut g = Graph::new();
        let cell = p.register(&mut g);
        let input_node = g.leaf(Tensor::vector(input.clone()));
        let state_node = g.leaf(Tensor::zeros(&[6]));
        let step = cell_step(&mut g, &cell, state_node, input_node).unwrap();

        let plain = cell_step_plain(&p, &p.zero_state(), &input).unwrap();
        assert_eq!(g.value(step.y).data(), plain.y.as_slice());
        assert_eq!(g.value(step.h).item(), plain.h);
        assert_eq!(g.value(step.state).data(), plain.state.as_slice());
    }

    #[test]
    fn fixed_forward_single_step_equals_cell_step() {
        let p = init_params(3, 4, 2, 5).unwrap();
        let input = vec![1.0, 0.0, -0.5];
        let via_fixed = fixed_forward_plain(&p, &input, 1).unwrap();
        let via_step = cell_step_plain(&p, &p.zero_state(), &input).unwrap();
        assert_eq!(via_fixed, via_step.y);
    }

    #[test]
    fn fixed_forward_three_steps_matches_manual_unroll() {
        let p = init_params(2, 3, 2, 8).unwrap();
        let input = vec![0.9, -0.4];
        let mut state = p.zero_state();
        let mut y = Vec::new();
        for _ in 0..3 {
            let out = cell_step_plain(&p, &state, &input).unwrap();
            state = out.state;
            y = out.y;
        }
        assert_eq!(fixed_forward_plain(&p, &input, 3).unwrap(), y);
    }

    #[test]
    fn from_store_recovers_dimensions() {
        let p = init_params(5, 7, 3, 11).unwrap();
        let q = CellParams::from_store(p.store().clone()).unwrap();
        assert_eq!((q.input_dim, q.state_dim, q.n_classes), (5, 7, 3));
    }
}
