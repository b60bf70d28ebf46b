//! Per-primitive gradient checks: for every operation on the tape, backward
//! must match central differences on randomized inputs at rel. err < 1e-6,
//! 100 trials per primitive. The differencing route goes through the same
//! graph construction but never touches the backward sweep.

use adapthalt::autodiff::{
    finite_diff_gradient, relative_error, Graph, NodeId, Op, ParamStore, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: usize = 100;
const TOLERANCE: f64 = 1e-6;

/// Builds a scalar objective from a primitive: leaves come from the store,
/// the primitive is applied, and the output is collapsed by sum-reduce after
/// a squaring so the reduction is not gradient-trivial. Returns the loss node
/// and the leaf ids in store order.
fn scalar_objective(
    g: &mut Graph,
    store: &ParamStore,
    build: impl Fn(&mut Graph, &[NodeId]) -> NodeId,
) -> (NodeId, Vec<NodeId>) {
    let leaves: Vec<NodeId> = store
        .entries()
        .iter()
        .map(|e| g.leaf(e.value.clone()))
        .collect();
    let out = build(g, &leaves);
    let squared = g.mul(out, out).unwrap();
    (g.sum_reduce(squared).unwrap(), leaves)
}

fn check_primitive(
    name: &str,
    seed: u64,
    make_store: impl Fn(&mut ChaCha8Rng) -> ParamStore,
    build: impl Fn(&mut Graph, &[NodeId]) -> NodeId + Copy,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let store = make_store(&mut rng);

        let mut g = Graph::new();
        let (loss, leaves) = scalar_objective(&mut g, &store, build);
        g.backward(loss).unwrap();

        let fd = finite_diff_gradient(
            |probe: &ParamStore| {
                let mut g = Graph::new();
                let (loss, _) = scalar_objective(&mut g, probe, build);
                Ok(g.value(loss).item())
            },
            &store,
            1e-5,
        )
        .unwrap();

        for (i, leaf) in leaves.iter().enumerate() {
            let ad = g.gradient(*leaf).expect("gradient populated");
            for (a, b) in ad.data().iter().zip(fd[i].data()) {
                let rel = relative_error(*a, *b);
                worst = worst.max(rel);
                assert!(
                    rel < TOLERANCE,
                    "{name} trial {trial}: tape {a} vs central-diff {b} (rel {rel:e})"
                );
            }
        }
    }
    println!("{name}: {TRIALS} trials, worst rel err {worst:e}");
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn two_vectors(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ParamStore {
    let n = rng.gen_range(1..6);
    let mut s = ParamStore::new();
    s.insert("a", uniform_tensor(rng, &[n], lo, hi)).unwrap();
    s.insert("b", uniform_tensor(rng, &[n], lo, hi)).unwrap();
    s
}

fn one_vector(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ParamStore {
    let n = rng.gen_range(1..6);
    let mut s = ParamStore::new();
    s.insert("a", uniform_tensor(rng, &[n], lo, hi)).unwrap();
    s
}

#[test]
fn add_gradients_match_central_differences() {
    check_primitive(
        "add",
        11,
        |rng| two_vectors(rng, -2.0, 2.0),
        |g, l| g.apply(Op::Add, &[l[0], l[1]]).unwrap(),
    );
}

#[test]
fn subtract_gradients_match_central_differences() {
    check_primitive(
        "subtract",
        12,
        |rng| two_vectors(rng, -2.0, 2.0),
        |g, l| g.apply(Op::Sub, &[l[0], l[1]]).unwrap(),
    );
}

#[test]
fn elementwise_multiply_gradients_match_central_differences() {
    check_primitive(
        "elementwise-multiply",
        13,
        |rng| two_vectors(rng, -2.0, 2.0),
        |g, l| g.apply(Op::Mul, &[l[0], l[1]]).unwrap(),
    );
}

#[test]
fn scalar_multiply_gradients_match_central_differences() {
    check_primitive(
        "scalar-multiply",
        14,
        |rng| {
            let n = rng.gen_range(1..6);
            let mut s = ParamStore::new();
            s.insert("a", uniform_tensor(rng, &[n], -2.0, 2.0)).unwrap();
            s.insert("s", uniform_tensor(rng, &[1], -2.0, 2.0)).unwrap();
            s
        },
        |g, l| g.apply(Op::ScalarMul, &[l[0], l[1]]).unwrap(),
    );
}

#[test]
fn matvec_gradients_match_central_differences() {
    check_primitive(
        "matrix-vector",
        15,
        |rng| {
            let m = rng.gen_range(1..5);
            let n = rng.gen_range(1..5);
            let mut s = ParamStore::new();
            s.insert("w", uniform_tensor(rng, &[m, n], -2.0, 2.0)).unwrap();
            s.insert("x", uniform_tensor(rng, &[n], -2.0, 2.0)).unwrap();
            s
        },
        |g, l| g.apply(Op::MatVec, &[l[0], l[1]]).unwrap(),
    );
}

#[test]
fn sigmoid_gradients_match_central_differences() {
    check_primitive(
        "sigmoid",
        16,
        |rng| one_vector(rng, -2.0, 2.0),
        |g, l| g.apply(Op::Sigmoid, &[l[0]]).unwrap(),
    );
}

#[test]
fn tanh_gradients_match_central_differences() {
    check_primitive(
        "tanh",
        17,
        |rng| one_vector(rng, -2.0, 2.0),
        |g, l| g.apply(Op::Tanh, &[l[0]]).unwrap(),
    );
}

#[test]
fn softmax_gradients_match_central_differences() {
    check_primitive(
        "softmax",
        18,
        |rng| one_vector(rng, -2.0, 2.0),
        |g, l| g.apply(Op::Softmax, &[l[0]]).unwrap(),
    );
}

#[test]
fn log_gradients_match_central_differences() {
    // Log is checked on its domain; the clamp keeps other inputs finite but
    // differencing across the clamp kink would be meaningless.
    check_primitive(
        "log",
        19,
        |rng| one_vector(rng, 0.1, 2.0),
        |g, l| g.apply(Op::Log, &[l[0]]).unwrap(),
    );
}

#[test]
fn concat_gradients_match_central_differences() {
    check_primitive(
        "concat",
        20,
        |rng| two_vectors(rng, -2.0, 2.0),
        |g, l| g.apply(Op::Concat, &[l[0], l[1]]).unwrap(),
    );
}

#[test]
fn sum_reduce_gradients_match_central_differences() {
    check_primitive(
        "sum-reduce",
        21,
        |rng| one_vector(rng, -2.0, 2.0),
        |g, l| g.apply(Op::SumReduce, &[l[0]]).unwrap(),
    );
}

#[test]
fn one_minus_gradients_match_central_differences() {
    check_primitive(
        "one-minus",
        22,
        |rng| one_vector(rng, -2.0, 2.0),
        |g, l| g.apply(Op::OneMinus, &[l[0]]).unwrap(),
    );
}

#[test]
fn index_select_gradients_match_central_differences() {
    check_primitive(
        "index-select",
        23,
        |rng| {
            let n = rng.gen_range(2..6);
            let mut s = ParamStore::new();
            s.insert("a", uniform_tensor(rng, &[n], -2.0, 2.0)).unwrap();
            s
        },
        |g, l| {
            let len = g.value(l[0]).len();
            g.apply(Op::IndexSelect(len / 2), &[l[0]]).unwrap()
        },
    );
}

#[test]
fn composite_loss_gradients_wrt_signals_and_answers() {
    // The mechanism's differentiability invariant, taken at the level of the
    // combination itself: halting signals and intermediate answers enter as
    // free leaves, the accumulator chain and ponder cost are built from
    // primitives, and every d(loss)/dh_i and d(loss)/dy_i entry must match
    // central differences.
    let n_steps = 5;
    let n_classes = 3;
    let target = 1;
    let tau = 1e-2;

    // Builds the composite loss, returning the loss node and the (y, h) leaf
    // ids per step.
    let build = |g: &mut Graph, store: &ParamStore| -> (NodeId, Vec<(NodeId, NodeId)>) {
        let mut leaf_ids = Vec::new();
        let mut acc = g.leaf(Tensor::zeros(&[n_classes]));
        let mut carry = g.constant(1.0);
        let mut rho: Option<NodeId> = None;
        for i in 0..n_steps {
            let y = g.leaf(store.get(&format!("y{i}")).unwrap().clone());
            let h = g.leaf(store.get(&format!("h{i}")).unwrap().clone());
            leaf_ids.push((y, h));
            let weighted = g.apply(Op::ScalarMul, &[y, carry]).unwrap();
            let inv = g.apply(Op::OneMinus, &[carry]).unwrap();
            let kept = g.apply(Op::ScalarMul, &[acc, inv]).unwrap();
            acc = g.apply(Op::Add, &[weighted, kept]).unwrap();
            carry = g.apply(Op::Mul, &[h, carry]).unwrap();
            rho = Some(match rho {
                None => carry,
                Some(r) => g.apply(Op::Add, &[r, carry]).unwrap(),
            });
        }
        let picked = g.apply(Op::IndexSelect(target), &[acc]).unwrap();
        let log = g.apply(Op::Log, &[picked]).unwrap();
        let neg = g.constant(-1.0);
        let ce = g.apply(Op::ScalarMul, &[log, neg]).unwrap();
        let tau_node = g.constant(tau);
        let penalty = g.apply(Op::ScalarMul, &[rho.unwrap(), tau_node]).unwrap();
        (g.apply(Op::Add, &[ce, penalty]).unwrap(), leaf_ids)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let mut store = ParamStore::new();
        for i in 0..n_steps {
            let raw: Vec<f64> = (0..n_classes).map(|_| rng.gen_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let y: Vec<f64> = raw.into_iter().map(|v| v / sum).collect();
            store.insert(&format!("y{i}"), Tensor::vector(y)).unwrap();
            store
                .insert(&format!("h{i}"), Tensor::scalar(rng.gen_range(0.05..0.95)))
                .unwrap();
        }

        let mut g = Graph::new();
        let (loss, leaf_ids) = build(&mut g, &store);
        g.backward(loss).unwrap();

        let fd = finite_diff_gradient(
            |probe: &ParamStore| {
                let mut g = Graph::new();
                let (loss, _) = build(&mut g, probe);
                Ok(g.value(loss).item())
            },
            &store,
            1e-5,
        )
        .unwrap();

        for (i, entry) in store.entries().iter().enumerate() {
            let idx: usize = entry.name[1..].parse().unwrap();
            let (y_id, h_id) = leaf_ids[idx];
            let ad = if entry.name.starts_with('y') {
                g.gradient(y_id).unwrap()
            } else {
                g.gradient(h_id).unwrap()
            };
            for (a, b) in ad.data().iter().zip(fd[i].data()) {
                let rel = relative_error(*a, *b);
                worst = worst.max(rel);
                assert!(
                    rel < TOLERANCE,
                    "trial {trial} {}: tape {a} vs fd {b} (rel {rel:e})",
                    entry.name
                );
            }
        }
    }
    println!("combination-level gradients: worst rel err {worst:e}");
}

#[test]
fn composed_expression_gradients_match_central_differences() {
    // A deeper composition touching most primitives at once.
    check_primitive(
        "composition",
        24,
        |rng| {
            let mut s = ParamStore::new();
            s.insert("w", uniform_tensor(rng, &[3, 4], -1.5, 1.5)).unwrap();
            s.insert("x", uniform_tensor(rng, &[2], -1.5, 1.5)).unwrap();
            s.insert("y", uniform_tensor(rng, &[2], -1.5, 1.5)).unwrap();
            s.insert("scale", uniform_tensor(rng, &[1], 0.1, 1.5)).unwrap();
            s
        },
        |g, l| {
            let cat = g.apply(Op::Concat, &[l[1], l[2]]).unwrap();
            let mv = g.apply(Op::MatVec, &[l[0], cat]).unwrap();
            let t = g.apply(Op::Tanh, &[mv]).unwrap();
            let sm = g.apply(Op::Softmax, &[t]).unwrap();
            let lg = g.apply(Op::Log, &[sm]).unwrap();
            let om = g.apply(Op::OneMinus, &[lg]).unwrap();
            let sc = g.apply(Op::ScalarMul, &[om, l[3]]).unwrap();
            let sig = g.apply(Op::Sigmoid, &[sc]).unwrap();
            g.apply(Op::IndexSelect(1), &[sig]).unwrap()
        },
    );
}
