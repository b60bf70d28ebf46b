//! Independent brute-force verifiers for the mechanism's closed-form claims:
//! the weighted-sum identity of the accumulator, soundness of the halting
//! criterion under every continuation, validity and ordering of the
//! probability bounds, and tape gradients against central differences.
//!
//! Each suite owns a dedicated RNG stream seeded explicitly, so reports are
//! reproducible independently of any training run. Halting signals are drawn
//! uniformly on [0, 1] (with a skew toward small values where halting events
//! must actually occur) and intermediate answers uniformly on the simplex via
//! exponential normalization.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptive::{
    accumulate, bound_runner_up, bound_top, implicit_weights, should_halt, update_p,
    AccumulatorState, HaltingTrace,
};
use crate::autodiff::{finite_diff_gradient, relative_error, Graph, Tensor};
use crate::cells::init_params;
use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub trial: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub suite: String,
    pub trials: usize,
    pub violations: Vec<Violation>,
    /// Suite-specific extremal statistics, e.g. worst deviations observed.
    pub stats: Vec<(String, f64)>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn push_violation(&mut self, trial: usize, detail: String) {
        // Keep reports bounded; the count is what acceptance checks.
        if self.violations.len() < 100 {
            self.violations.push(Violation { trial, detail });
        }
    }
}

/// Uniform draw from the probability simplex by exponential normalization.
fn sample_simplex(rng: &mut ChaCha8Rng, n_classes: usize) -> Vec<f64> {
    let mut y: Vec<f64> = (0..n_classes)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            -u.ln()
        })
        .collect();
    let sum: f64 = y.iter().sum();
    for v in y.iter_mut() {
        *v /= sum;
    }
    y
}

/// Halting signal skewed toward small values half the time, so chains die
/// often enough to exercise the halting machinery.
fn sample_halting_signal(rng: &mut ChaCha8Rng, skew: bool) -> f64 {
    let u: f64 = rng.gen_range(0.0..=1.0);
    if skew && rng.gen_bool(0.5) {
        u * u * u
    } else {
        u
    }
}

// ── Weighted-sum identity ────────────────────────────────────────────────

/// Draws random (h, y) sequences, runs the accumulator recurrence, and
/// compares against the implicit-weight expansion. The identity is exact, so
/// anything beyond rounding (1e-12) is a violation.
pub fn verify_weighted_sum(n_trials: usize, n_max: usize, seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Report {
        suite: "weighted_sum".into(),
        trials: n_trials,
        violations: Vec::new(),
        stats: Vec::new(),
    };
    let mut max_dev = 0.0f64;
    let mut max_weight_dev = 0.0f64;

    for trial in 0..n_trials {
        let n_steps = rng.gen_range(1..=n_max.max(1));
        let n_classes = rng.gen_range(2..=6);
        let h: Vec<f64> = (0..n_steps).map(|_| sample_halting_signal(&mut rng, false)).collect();
        let ys: Vec<Vec<f64>> = (0..n_steps).map(|_| sample_simplex(&mut rng, n_classes)).collect();

        let trace = match HaltingTrace::from_signals(&h) {
            Ok(t) => t,
            Err(e) => {
                report.push_violation(trial, format!("trace rejected: {e}"));
                continue;
            }
        };
        let mut acc = AccumulatorState::start(n_classes);
        for (i, y) in ys.iter().enumerate() {
            acc = match accumulate(&acc, y) {
                Ok(a) => a,
                Err(e) => {
                    report.push_violation(trial, format!("accumulate step {i}: {e}"));
                    break;
                }
            };
            acc.p_carry = trace.p[i];
        }

        let beta = match implicit_weights(&trace, n_steps) {
            Ok(b) => b,
            Err(e) => {
                report.push_violation(trial, format!("weights rejected: {e}"));
                continue;
            }
        };
        let weight_sum: f64 = beta.iter().sum();
        let weight_dev = (weight_sum - 1.0).abs();
        max_weight_dev = max_weight_dev.max(weight_dev);
        if weight_dev > 1e-12 {
            report.push_violation(trial, format!("sum(beta) = {weight_sum}"));
        }
        if let Some(b) = beta.iter().find(|b| **b < 0.0) {
            report.push_violation(trial, format!("negative weight {b}"));
        }

        for c in 0..n_classes {
            let expanded: f64 = beta.iter().zip(&ys).map(|(b, y)| b * y[c]).sum();
            let dev = (expanded - acc.a[c]).abs();
            max_dev = max_dev.max(dev);
            if dev > 1e-12 {
                report.push_violation(
                    trial,
                    format!("class {c}: recurrence {} vs expansion {expanded}", acc.a[c]),
                );
            }
        }
    }
    report.stats.push(("max_abs_deviation".into(), max_dev));
    report.stats.push(("max_weight_sum_deviation".into(), max_weight_dev));
    report
}

// ── Halting soundness ────────────────────────────────────────────────────

/// Runs the accumulator forward through a random continuation of a halted
/// prefix and reports the final answer vector.
fn run_continuation(
    acc: &AccumulatorState,
    p_n: f64,
    d: usize,
    ys: &[Vec<f64>],
    hs: &[f64],
) -> Vec<f64> {
    let mut a = acc.a.clone();
    let mut carry = p_n;
    for i in 0..d {
        for (av, yv) in a.iter_mut().zip(&ys[i]) {
            *av = yv * carry + *av * (1.0 - carry);
        }
        carry *= hs[i];
    }
    a
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

/// Finds prefixes where the criterion fires with steps remaining, then throws
/// the adversarial extreme continuation (every future answer fully on the
/// runner-up with the chain held open) plus random continuations at it. Any
/// argmax flip is a violation.
pub fn verify_halting_soundness(
    n_halt_events: usize,
    n_continuations: usize,
    n_steps: usize,
    n_classes: usize,
    seed: u64,
) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Report {
        suite: "halting_soundness".into(),
        trials: 0,
        violations: Vec::new(),
        stats: Vec::new(),
    };
    let mut events = 0usize;
    let mut attempts = 0usize;
    let mut d_total = 0usize;
    let mut live_chain_events = 0usize;
    let max_attempts = n_halt_events.saturating_mul(2000).max(10_000);

    while events < n_halt_events && attempts < max_attempts {
        attempts += 1;
        // Random prefix, evaluating the criterion after every step.
        let mut acc = AccumulatorState::start(n_classes);
        let mut carry = 1.0;
        let mut halted: Option<(AccumulatorState, f64, usize, usize)> = None;
        for n in 1..=n_steps {
            let y = sample_simplex(&mut rng, n_classes);
            acc = accumulate(&acc, &y).expect("simplex by construction");
            let h = sample_halting_signal(&mut rng, true);
            carry = update_p(carry, h).expect("in range");
            acc.p_carry = carry;
            let d = n_steps - n;
            let decision = should_halt(&acc, carry, d).expect("valid state");
            if decision.halt && d >= 1 {
                halted = Some((acc.clone(), carry, d, decision.top_class));
                break;
            }
        }
        let Some((acc, p_n, d, top)) = halted else {
            continue;
        };
        events += 1;
        d_total += d;
        if p_n > 1e-3 {
            live_chain_events += 1;
        }

        // Adversarial extreme: all future mass on the runner-up, chain open.
        let ru = should_halt(&acc, p_n, d).unwrap().runner_up;
        let mut one_hot = vec![0.0; n_classes];
        one_hot[ru] = 1.0;
        let adversarial_ys = vec![one_hot; d];
        let adversarial_hs = vec![1.0; d];
        let final_a = run_continuation(&acc, p_n, d, &adversarial_ys, &adversarial_hs);
        if argmax(&final_a) != top {
            report.push_violation(
                events,
                format!(
                    "adversarial flip: top {top} -> {} (p_n {p_n}, d {d})",
                    argmax(&final_a)
                ),
            );
        }

        for c in 0..n_continuations {
            let ys: Vec<Vec<f64>> = (0..d).map(|_| sample_simplex(&mut rng, n_classes)).collect();
            let hs: Vec<f64> = (0..d).map(|_| sample_halting_signal(&mut rng, false)).collect();
            let final_a = run_continuation(&acc, p_n, d, &ys, &hs);
            if argmax(&final_a) != top {
                report.push_violation(
                    events,
                    format!(
                        "random continuation {c} flip: top {top} -> {} (p_n {p_n}, d {d})",
                        argmax(&final_a)
                    ),
                );
            }
        }
    }
    report.trials = events;
    report.stats.push(("halt_events".into(), events as f64));
    report
        .stats
        .push(("prefix_attempts".into(), attempts as f64));
    if events > 0 {
        report
            .stats
            .push(("mean_remaining_steps".into(), d_total as f64 / events as f64));
        report
            .stats
            .push(("live_chain_events".into(), live_chain_events as f64));
    }
    if events < n_halt_events {
        report.push_violation(
            0,
            format!("only {events} of {n_halt_events} halt events found"),
        );
    }
    report
}

// ── Bound validity ───────────────────────────────────────────────────────

/// Product-form lower bound for the top class over an explicit future chain.
fn product_bound_top(pr_top: f64, future_p: &[f64]) -> f64 {
    pr_top * future_p.iter().map(|p| 1.0 - p).product::<f64>()
}

/// Product-form upper bound for the runner-up over an explicit future chain.
fn product_bound_runner_up(pr_ru: f64, future_p: &[f64]) -> f64 {
    let d = future_p.len();
    let mut bound = pr_ru * future_p.iter().map(|p| 1.0 - p).product::<f64>();
    for i in 0..d {
        let tail: f64 = future_p[i + 1..].iter().map(|p| 1.0 - p).product();
        bound += future_p[i] * tail;
    }
    bound
}

/// For random traces, every prefix must satisfy
/// `realized top >= product bound >= simplified bound` and
/// `realized runner-up <= product bound <= simplified bound`.
/// Comparisons allow 1e-12 of rounding slack; the worst raw margins are
/// reported so any reliance on the slack is visible.
pub fn verify_bounds(n_trials: usize, seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Report {
        suite: "bounds".into(),
        trials: n_trials,
        violations: Vec::new(),
        stats: Vec::new(),
    };
    const SLACK: f64 = 1e-12;
    let mut worst_margin = f64::INFINITY;

    for trial in 0..n_trials {
        let n_steps = rng.gen_range(2..=12);
        let n_classes = rng.gen_range(2..=5);
        let h: Vec<f64> = (0..n_steps).map(|_| sample_halting_signal(&mut rng, true)).collect();
        let ys: Vec<Vec<f64>> = (0..n_steps).map(|_| sample_simplex(&mut rng, n_classes)).collect();
        let trace = HaltingTrace::from_signals(&h).expect("in range");

        // All accumulator states a_1..a_N.
        let mut states = Vec::with_capacity(n_steps);
        let mut acc = AccumulatorState::start(n_classes);
        for (i, y) in ys.iter().enumerate() {
            acc = accumulate(&acc, y).expect("simplex");
            acc.p_carry = trace.p[i];
            states.push(acc.clone());
        }
        let final_a = &states[n_steps - 1].a;

        for n in 1..n_steps {
            let a_n = &states[n - 1].a;
            let p_n = trace.p[n - 1];
            let d = n_steps - n;
            let (top, ru) = {
                let mut top = 0;
                for (i, v) in a_n.iter().enumerate().skip(1) {
                    if *v > a_n[top] {
                        top = i;
                    }
                }
                let mut ru = usize::MAX;
                for (i, v) in a_n.iter().enumerate() {
                    if i != top && (ru == usize::MAX || *v > a_n[ru]) {
                        ru = i;
                    }
                }
                (top, ru)
            };
            // Future chain p_n .. p_(N-1) as carried into steps n+1 .. N.
            let future_p = &trace.p[n - 1..n_steps - 1];

            let simple_top = bound_top(a_n[top], p_n, d);
            let product_top = product_bound_top(a_n[top], future_p);
            let realized_top = final_a[top];

            let simple_ru = bound_runner_up(a_n[ru], p_n, d);
            let product_ru = product_bound_runner_up(a_n[ru], future_p);
            let realized_ru = final_a[ru];

            let checks = [
                ("realized_top >= product_top", realized_top - product_top),
                ("product_top >= simple_top", product_top - simple_top),
                ("product_ru >= realized_ru", product_ru - realized_ru),
                ("simple_ru >= product_ru", simple_ru - product_ru),
            ];
            for (what, margin) in checks {
                worst_margin = worst_margin.min(margin);
                if margin < -SLACK {
                    report.push_violation(
                        trial,
                        format!("step {n}: {what} violated by {margin:e}"),
                    );
                }
            }
        }
    }
    report.stats.push(("worst_margin".into(), worst_margin));
    report
}

// ── Gradient audit ───────────────────────────────────────────────────────

/// Composite loss through a full unrolled run on a toy cell, tape gradients
/// vs central differences. The returned stats carry the worst relative error.
pub fn verify_gradients(
    input_dim: usize,
    state_dim: usize,
    n_classes: usize,
    n_steps: usize,
    tau: f64,
    seed: u64,
) -> Result<Report> {
    let mut report = Report {
        suite: "gradients".into(),
        trials: 0,
        violations: Vec::new(),
        stats: Vec::new(),
    };
    let params = init_params(input_dim, state_dim, n_classes, seed)?;
    report
        .stats
        .push(("n_parameters".into(), params.n_scalars() as f64));

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let input: Vec<f64> = (0..input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let target = rng.gen_range(0..n_classes);

    // Tape route.
    let mut g = Graph::new();
    let cell = params.register(&mut g);
    let input_node = g.leaf(Tensor::vector(input.clone()));
    let run = crate::adaptive::dact_forward(&mut g, &cell, input_node, n_steps)?;
    let picked = g.index_select(run.y, target)?;
    let log = g.log(picked)?;
    let neg = g.constant(-1.0);
    let ce = g.scalar_mul(log, neg)?;
    let tau_node = g.constant(tau);
    let penalty = g.scalar_mul(run.rho, tau_node)?;
    let loss = g.add(ce, penalty)?;
    g.backward(loss)?;

    // Finite-difference route over the same objective.
    let objective = |store: &crate::autodiff::ParamStore| -> Result<f64> {
        let probe = crate::cells::CellParams::from_store(store.clone())?;
        let (y, rho, _, _) = crate::adaptive::run_training_forward(&probe, &input, n_steps)?;
        let ce = -(y[target].max(crate::autodiff::LOG_CLAMP).ln());
        crate::adaptive::composite_loss(ce, rho, tau)
    };
    let fd = finite_diff_gradient(objective, params.store(), 1e-5)?;

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (i, entry) in params.store().entries().iter().enumerate() {
        let ad = g.gradient(cell.nodes[i]).expect("populated by backward");
        for (j, (a, b)) in ad.data().iter().zip(fd[i].data()).enumerate() {
            let rel = relative_error(*a, *b);
            max_rel = max_rel.max(rel);
            checked += 1;
            if rel >= 1e-6 {
                report.push_violation(
                    checked,
                    format!("{}[{j}]: tape {a} vs central-diff {b} (rel {rel:e})", entry.name),
                );
            }
        }
    }
    report.trials = checked;
    report.stats.push(("max_relative_error".into(), max_rel));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_samples_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let y = sample_simplex(&mut rng, 5);
            let sum: f64 = y.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(y.iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn weighted_sum_identity_holds_on_small_run() {
        let report = verify_weighted_sum(2000, 12, 99);
        assert!(report.passed(), "{:?}", report.violations.first());
    }

    #[test]
    fn weighted_sum_recovers_degenerate_chains() {
        // All-ones: only the last answer survives.
        let trace = HaltingTrace::from_signals(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(
            implicit_weights(&trace, 4).unwrap(),
            vec![0.0, 0.0, 0.0, 1.0]
        );
        // First-step death: only the first answer survives.
        let trace = HaltingTrace::from_signals(&[0.0, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(
            implicit_weights(&trace, 4).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn soundness_holds_on_small_run() {
        let report = verify_halting_soundness(50, 200, 8, 3, 7);
        assert!(report.passed(), "{:?}", report.violations.first());
        assert!(report.trials >= 50);
    }

    #[test]
    fn dead_chain_continuations_leave_answer_exactly() {
        let acc = AccumulatorState {
            a: vec![0.2, 0.5, 0.3],
            p_carry: 0.0,
            n: 2,
        };
        let ys = vec![vec![1.0, 0.0, 0.0]; 4];
        let hs = vec![1.0; 4];
        let final_a = run_continuation(&acc, 0.0, 4, &ys, &hs);
        assert_eq!(final_a, acc.a);
    }

    #[test]
    fn bounds_hold_on_small_run() {
        let report = verify_bounds(2000, 3);
        assert!(report.passed(), "{:?}", report.violations.first());
    }

    #[test]
    fn product_and_simple_bounds_coincide_for_constant_chain() {
        // Constant future chain: (1-p)^d both ways for the top bound.
        let p = 0.3;
        let future = vec![p; 4];
        let product = product_bound_top(0.8, &future);
        let simple = bound_top(0.8, p, 4);
        assert!((product - simple).abs() < 1e-15);
    }

    #[test]
    fn dead_chain_collapses_all_bounds_to_current_probabilities() {
        let future = vec![0.0; 3];
        assert_eq!(product_bound_top(0.7, &future), 0.7);
        assert_eq!(product_bound_runner_up(0.2, &future), 0.2);
        assert_eq!(bound_top(0.7, 0.0, 3), 0.7);
        assert_eq!(bound_runner_up(0.2, 0.0, 3), 0.2);
    }

    #[test]
    fn gradient_audit_passes_on_toy_model() {
        // 4-dim state through 4 unrolled steps.
        let report = verify_gradients(4, 4, 2, 4, 1e-2, 5).unwrap();
        assert!(report.passed(), "{:?}", report.violations.first());
        assert!(report.trials > 0);
        let max_rel = report
            .stats
            .iter()
            .find(|(k, _)| k == "max_relative_error")
            .unwrap()
            .1;
        assert!(max_rel < 1e-6, "max rel err {max_rel}");
    }

    #[test]
    fn central_difference_error_shrinks_quadratically() {
        // Richardson-style check on a smooth scalar objective: halving the
        // step should cut the truncation error by about 4x.
        let mut params = crate::autodiff::ParamStore::new();
        params.insert("w", Tensor::scalar(0.7)).unwrap();
        let f = |p: &crate::autodiff::ParamStore| -> Result<f64> {
            let w = p.get("w").unwrap().item();
            Ok((2.0 * w).tanh().powi(3) + (w * 1.3).sin())
        };
        let w = 0.7f64;
        let t = (2.0 * w).tanh();
        let exact = 3.0 * t * t * 2.0 * (1.0 - t * t) + 1.3 * (w * 1.3).cos();

        let coarse = finite_diff_gradient(f, &params, 1e-3).unwrap()[0].item();
        let fine = finite_diff_gradient(f, &params, 5e-4).unwrap()[0].item();
        let err_coarse = (coarse - exact).abs();
        let err_fine = (fine - exact).abs();
        let ratio = err_coarse / err_fine;
        assert!(
            (2.5..6.0).contains(&ratio),
            "expected ~4x error reduction, got {ratio} ({err_coarse} -> {err_fine})"
        );
    }

    #[test]
    fn zero_tau_zeroes_the_penalty_gradient_contribution() {
        let a = verify_gradients(3, 4, 2, 3, 0.0, 11).unwrap();
        assert!(a.passed());
    }
}
