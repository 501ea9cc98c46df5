use proptest::prelude::*;
use qrcl_core::attention::Attention;
use qrcl_core::metrics::{self, ConfusionCounts};
use qrcl_core::ops;
use qrcl_core::recurrent::{Baseline, BaselineConfig, BaselineKind, LstmCell, LstmState};
use qrcl_core::{Init, ParamStore, Tape, Tensor};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-5.0f64..5.0, rows * cols)
        .prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(0u8..2, n),
        )
            .prop_map(|(s, mut l)| {
                l[0] = 0;
                l[1] = 1;
                (s, l)
            })
    })
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(a in matrix(4, 6), shift in -50.0f64..50.0) {
        let s = ops::softmax_rows(&a).unwrap();
        for r in 0..4 {
            let sum: f64 = s.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(s.row(r).iter().all(|&p| p > 0.0));
        }
        let shifted = ops::softmax_rows(&a.map(|v| v + shift)).unwrap();
        for (u, v) in s.data().iter().zip(shifted.data()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rectified_quantiles_never_cross(raw in prop::collection::vec(-30.0f64..30.0, 1..8)) {
        let q = ops::cum_softplus(&Tensor::vector(raw.clone())).unwrap();
        prop_assert_eq!(q.data()[0], raw[0]);
        prop_assert!(q.data().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn auc_invariant_under_monotone_maps((scores, labels) in scored_labels()) {
        let a = metrics::auc(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let mapped: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 1.0).collect();
        prop_assert!((metrics::auc(&mapped, &labels).unwrap() - a).abs() < 1e-12);
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((metrics::auc(&negated, &labels).unwrap() - (1.0 - a)).abs() < 1e-12);
        let roc = metrics::roc_curve(&scores, &labels).unwrap();
        prop_assert!((metrics::trapezoid_auc(&roc) - a).abs() < 1e-12);
    }

    #[test]
    fn f1_is_harmonic_mean(tp in 0u64..50, tn in 0u64..50, fp in 0u64..50, fn_ in 0u64..50) {
        let c = ConfusionCounts { tp, tn, fp, fn_ };
        let (p, r, f) = (c.precision(), c.recall(), c.f1());
        prop_assert!(p.value.is_finite() && r.value.is_finite() && f.value.is_finite());
        if p.value + r.value > 0.0 {
            prop_assert!((f.value - 2.0 * p.value * r.value / (p.value + r.value)).abs() < 1e-12);
        } else {
            prop_assert_eq!(f.value, 0.0);
        }
        prop_assert_eq!(p.degenerate, tp + fp == 0);
        prop_assert_eq!(r.degenerate, tp + fn_ == 0);
    }

    #[test]
    fn pinball_minimizer_is_the_empirical_quantile(
        ys in prop::collection::vec(-10.0f64..10.0, 5..30),
        tau in 0.05f64..0.95,
    ) {
        let risk = |q: f64| -> f64 {
            ys.iter().map(|y| { let e = y - q; (tau * e).max((tau - 1.0) * e) }).sum()
        };
        // Among the sample points the empirical τ-quantile minimizes risk.
        let mut sorted = ys.clone();
        sorted.sort_by(f64::total_cmp);
        let k = ((tau * ys.len() as f64).ceil() as usize).clamp(1, ys.len()) - 1;
        let q = sorted[k];
        let grid_best = (0..=400)
            .map(|i| -10.0 + 0.05 * i as f64)
            .map(risk)
            .fold(f64::INFINITY, f64::min);
        prop_assert!(risk(q) <= grid_best + 1e-9);
        // and the tape loss agrees with the closed form
        let mut tape = Tape::new();
        let pred = tape.constant(Tensor::vector(vec![q]));
        let mut total = 0.0;
        for &y in &ys {
            let l = tape.pinball(pred, y, &[tau]).unwrap();
            total += tape.value(l).data()[0];
        }
        prop_assert!((total - risk(q)).abs() < 1e-9);
    }

    #[test]
    fn lstm_gates_stay_in_range(x in matrix(5, 3), seed in 0u64..1000) {
        let mut store = ParamStore::<f64>::new();
        let cell = LstmCell::new(&mut store, &Init::new(seed), "lstm", 3, 4).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let mut state = LstmState::zeros(&mut tape, 4);
        let xv = tape.constant(x);
        for t in 0..5 {
            let xt = tape.row(xv, t).unwrap();
            let (next, gates) = cell.step_with_gates(&mut tape, &bound, state, xt).unwrap();
            for g in [gates.forget, gates.input, gates.output] {
                prop_assert!(tape.value(g).data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
            prop_assert!(tape.value(gates.candidate).data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
            prop_assert!(tape.value(next.h).data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
            state = next;
        }
    }

    #[test]
    fn tcn_output_ignores_future_inputs(x in matrix(8, 2), t in 0usize..7, bump in 0.5f64..3.0) {
        let mut store = ParamStore::<f64>::new();
        let cfg = BaselineConfig::new(BaselineKind::Tcn, 2, 3);
        let tcn = Baseline::new(&mut store, &Init::new(1), "tcn", &cfg).unwrap();
        let run = |input: Tensor<f64>| {
            let mut tape = Tape::new();
            let bound = store.bind_frozen(&mut tape);
            let v = tape.constant(input);
            let y = tcn.forward(&mut tape, &bound, v).unwrap();
            tape.value(y).clone()
        };
        let base = run(x.clone());
        let mut changed = x.clone();
        for c in 0..2 {
            changed.data_mut()[(t + 1) * 2 + c] += bump;
        }
        let after = run(changed);
        for s in 0..=t {
            prop_assert_eq!(base.row(s), after.row(s));
        }
    }

    #[test]
    fn self_attention_commutes_with_row_permutations(x in matrix(4, 3), seed in 0u64..100) {
        let mut store = ParamStore::<f64>::new();
        let att = Attention::new(&mut store, &Init::new(seed), "att", 3, 3, 4, 4, 1).unwrap();
        let perm = [2usize, 0, 3, 1];
        let xp = Tensor::from_rows(&perm.iter().map(|&p| x.row(p).to_vec()).collect::<Vec<_>>()).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let (a, b) = (tape.constant(x), tape.constant(xp));
        let oa = att.self_attention(&mut tape, &bound, a).unwrap();
        let ob = att.self_attention(&mut tape, &bound, b).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for (u, v) in tape.value(ob.values).row(i).iter().zip(tape.value(oa.values).row(p)) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn replaying_a_graph_is_bitwise_identical(x in matrix(3, 4), seed in 0u64..100) {
        let mut store = ParamStore::<f64>::new();
        let att = Attention::new(&mut store, &Init::new(seed), "att", 4, 4, 4, 4, 2).unwrap();
        let run = || {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let v = tape.constant(x.clone());
            let out = att.multihead(&mut tape, &bound, v, v).unwrap();
            let loss = tape.sum(out.values);
            let grads = tape.backward(loss).unwrap();
            (tape.value(loss).clone(), bound.gradients(&grads))
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        prop_assert_eq!(l1, l2);
        prop_assert_eq!(g1.0, g2.0);
    }
}

#[test]
fn saturated_forget_gate_preserves_the_cell() {
    let mut store = ParamStore::<f64>::new();
    let cell = LstmCell::new(&mut store, &Init::new(3), "lstm", 2, 3).unwrap();
    for id in [cell.w_forget, cell.w_input, cell.w_candidate, cell.w_output] {
        let shape = store.get(id).shape().to_vec();
        *store.get_mut(id) = Tensor::zeros(&shape);
    }
    *store.get_mut(cell.b_forget) = Tensor::full(&[3], 50.0);
    *store.get_mut(cell.b_input) = Tensor::full(&[3], -50.0);
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let c0 = Tensor::vector(vec![0.7, -1.2, 0.1]);
    let mut state = LstmState {
        h: tape.constant(Tensor::zeros(&[3])),
        c: tape.constant(c0.clone()),
    };
    let x = tape.constant(Tensor::vector(vec![1.0, -1.0]));
    for _ in 0..100 {
        state = cell.step(&mut tape, &bound, state, x).unwrap();
    }
    for (a, b) in tape.value(state.c).data().iter().zip(c0.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn softmax_rows_sum_to_one_over_a_thousand_draws() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1000 {
        let cols = rng.random_range(1..20);
        let a = Tensor::new(
            vec![3, cols],
            (0..3 * cols).map(|_| rng.random_range(-100.0..100.0)).collect(),
        )
        .unwrap();
        let s = ops::softmax_rows(&a).unwrap();
        for r in 0..3 {
            assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
