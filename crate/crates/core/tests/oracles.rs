//! Layer outputs against independently written scalar-loop references.

use qrcl_core::attention::Attention;
use qrcl_core::metrics::{self, ConfusionCounts};
use qrcl_core::ops::{self, ConvSpec, PoolMode};
use qrcl_core::qrcnn::{Conv1d, QrcnnBlock, QrcnnConfig};
use qrcl_core::recurrent::{LstmCell, LstmState};
use qrcl_core::{Init, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn conv_reference(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize) -> Vec<Vec<f64>> {
    let (c_in, len) = (x.shape()[0], x.shape()[1]);
    let (c_out, k) = (w.shape()[0], w.shape()[2]);
    let l_out = (len - k) / stride + 1;
    let mut out = vec![vec![0.0; l_out]; c_out];
    for c in 0..c_out {
        for t in 0..l_out {
            let mut acc = b.data()[c];
            for i in 0..c_in {
                for j in 0..k {
                    acc += w.data()[c * c_in * k + i * k + j] * x.data()[i * len + t * stride + j];
                }
            }
            out[c][t] = acc;
        }
    }
    out
}

#[test]
fn conv1d_matches_loop_enumeration_on_every_small_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for c_in in 1..=3 {
        for c_out in 1..=3 {
            for k in 1..=4 {
                for len in k..=10 {
                    for stride in 1..=2 {
                        let x = random(&mut rng, &[c_in, len]);
                        let w = random(&mut rng, &[c_out, c_in, k]);
                        let b = random(&mut rng, &[c_out]);
                        let spec = ConvSpec {
                            stride,
                            ..ConvSpec::default()
                        };
                        let got = ops::conv1d(&x, &w, &b, spec).unwrap();
                        let want = conv_reference(&x, &w, &b, stride);
                        for (c, row) in want.iter().enumerate() {
                            for (t, &v) in row.iter().enumerate() {
                                assert!((got.get2(c, t) - v).abs() < 1e-12);
                            }
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn conv_layer_forward_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let layer = Conv1d::new(&mut store, &Init::new(5), "c", 2, 3, 3, ConvSpec::default()).unwrap();
    *store.get_mut(layer.bias) = random(&mut rng, &[3]);
    let x = random(&mut rng, &[2, 8]);
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let out = layer.forward(&mut tape, &bound, xv).unwrap();
    let want = conv_reference(&x, store.get(layer.weight), store.get(layer.bias), 1);
    assert_eq!(tape.value(out).shape(), &[3, 6]);
    for (c, row) in want.iter().enumerate() {
        for (t, &v) in row.iter().enumerate() {
            assert!((tape.value(out).get2(c, t) - v).abs() < 1e-12);
        }
    }
}

#[test]
fn region_pool_matches_partition_enumeration() {
    // length 7, three regions: explicit partition {0,1,2} {3,4} {5,6}
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let fmap = random(&mut rng, &[2, 7]);
    let parts: [&[usize]; 3] = [&[0, 1, 2], &[3, 4], &[5, 6]];
    let (max, _) = ops::region_pool(&fmap, 3, PoolMode::Max).unwrap();
    let (avg, _) = ops::region_pool(&fmap, 3, PoolMode::Avg).unwrap();
    for c in 0..2 {
        for (r, part) in parts.iter().enumerate() {
            let vals: Vec<f64> = part.iter().map(|&p| fmap.get2(c, p)).collect();
            let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let a = vals.iter().sum::<f64>() / vals.len() as f64;
            assert_eq!(max.data()[c * 3 + r], m);
            assert!((avg.data()[c * 3 + r] - a).abs() < 1e-15);
        }
    }
}

#[test]
fn qrcnn_output_length_is_fixed() {
    let mut store = ParamStore::<f64>::new();
    let mut cfg = QrcnnConfig::new(3);
    cfg.out_channels = 6;
    let block = QrcnnBlock::new(&mut store, &Init::new(2), "q", cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for len in 5..=20 {
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let x = tape.constant(random(&mut rng, &[3, len]));
        let out = block.forward(&mut tape, &bound, x).unwrap();
        assert_eq!(tape.value(out).shape(), &[48]);
    }
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let x = tape.constant(random(&mut rng, &[3, 4]));
    assert!(block.forward(&mut tape, &bound, x).is_err());
}

#[test]
fn qrcnn_zero_parameters_give_zero_features() {
    let mut store = ParamStore::<f64>::new();
    let block = QrcnnBlock::new(&mut store, &Init::new(2), "q", QrcnnConfig::new(2)).unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.get(id).shape().to_vec();
        *store.get_mut(id) = Tensor::zeros(&shape);
    }
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let x = tape.constant(random(&mut ChaCha8Rng::seed_from_u64(1), &[2, 9]));
    let out = block.forward(&mut tape, &bound, x).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gate equations evaluated with plain loops over `[h_prev, x]`.
fn lstm_reference(
    w: [&Tensor<f64>; 4],
    b: [&Tensor<f64>; 4],
    h_prev: &[f64],
    c_prev: &[f64],
    x: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let hdim = h_prev.len();
    let z: Vec<f64> = h_prev.iter().chain(x).copied().collect();
    let affine = |m: &Tensor<f64>, bias: &Tensor<f64>, r: usize| {
        let mut acc = 0.0;
        for (j, zj) in z.iter().enumerate() {
            acc += m.get2(r, j) * zj;
        }
        acc + bias.data()[r]
    };
    let mut h = vec![0.0; hdim];
    let mut c = vec![0.0; hdim];
    for r in 0..hdim {
        let f = sig(affine(w[0], b[0], r));
        let i = sig(affine(w[1], b[1], r));
        let cand = affine(w[2], b[2], r).tanh();
        c[r] = f * c_prev[r] + i * cand;
        let o = sig(affine(w[3], b[3], r));
        h[r] = o * c[r].tanh();
    }
    (h, c)
}

#[test]
fn lstm_step_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..20 {
        let mut store = ParamStore::<f64>::new();
        let cell = LstmCell::new(&mut store, &Init::new(trial), "lstm", 2, 3).unwrap();
        for id in [cell.b_forget, cell.b_input, cell.b_candidate, cell.b_output] {
            *store.get_mut(id) = random(&mut rng, &[3]);
        }
        let h0 = random(&mut rng, &[3]);
        let c0 = random(&mut rng, &[3]);
        let x = random(&mut rng, &[2]);
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let state = LstmState {
            h: tape.constant(h0.clone()),
            c: tape.constant(c0.clone()),
        };
        let xv = tape.constant(x.clone());
        let s = cell.step(&mut tape, &bound, state, xv).unwrap();
        let w = [cell.w_forget, cell.w_input, cell.w_candidate, cell.w_output].map(|id| store.get(id));
        let b = [cell.b_forget, cell.b_input, cell.b_candidate, cell.b_output].map(|id| store.get(id));
        let (h, c) = lstm_reference(w, b, h0.data(), c0.data(), x.data());
        for r in 0..3 {
            assert!((tape.value(s.h).data()[r] - h[r]).abs() < 1e-12);
            assert!((tape.value(s.c).data()[r] - c[r]).abs() < 1e-12);
        }
    }
}

#[test]
fn lstm_sequence_of_one_equals_one_step() {
    let mut store = ParamStore::<f64>::new();
    let cell = LstmCell::new(&mut store, &Init::new(4), "lstm", 3, 4).unwrap();
    let x = random(&mut ChaCha8Rng::seed_from_u64(2), &[1, 3]);
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let s0 = LstmState::zeros(&mut tape, 4);
    let xv = tape.constant(x.clone());
    let (hs, _) = cell.sequence(&mut tape, &bound, xv, s0).unwrap();
    let xt = tape.constant(Tensor::vector(x.row(0).to_vec()));
    let s1 = cell.step(&mut tape, &bound, s0, xt).unwrap();
    assert_eq!(tape.value(hs).row(0), tape.value(s1.h).data());
}

/// Attention evaluated with explicit triple loops.
fn attention_reference(
    x: &Tensor<f64>,
    y: &Tensor<f64>,
    wq: &Tensor<f64>,
    wk: &Tensor<f64>,
    wv: &Tensor<f64>,
) -> Vec<Vec<f64>> {
    let proj = |a: &Tensor<f64>, w: &Tensor<f64>| -> Vec<Vec<f64>> {
        let (n, d) = (a.shape()[0], a.shape()[1]);
        let out_d = w.shape()[1];
        (0..n)
            .map(|i| {
                (0..out_d)
                    .map(|j| (0..d).map(|p| a.get2(i, p) * w.get2(p, j)).sum())
                    .collect()
            })
            .collect()
    };
    let (q, k, v) = (proj(x, wq), proj(y, wk), proj(y, wv));
    let dk = wq.shape()[1] as f64;
    q.iter()
        .map(|qi| {
            let logits: Vec<f64> = k
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / dk.sqrt())
                .collect();
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            (0..v[0].len())
                .map(|c| e.iter().zip(&v).map(|(w, vj)| w / z * vj[c]).sum())
                .collect()
        })
        .collect()
}

#[test]
fn cross_attention_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..20 {
        let mut store = ParamStore::<f64>::new();
        let att = Attention::new(&mut store, &Init::new(trial), "att", 3, 2, 5, 4, 1).unwrap();
        let x = random(&mut rng, &[3, 3]);
        let y = random(&mut rng, &[4, 2]);
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let out = att.cross(&mut tape, &bound, xv, yv).unwrap();
        let want = attention_reference(
            &x,
            &y,
            store.get(att.w_query),
            store.get(att.w_key),
            store.get(att.w_value),
        );
        for (i, row) in want.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!((tape.value(out.values).get2(i, j) - v).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn identical_keys_average_values() {
    let mut store = ParamStore::<f64>::new();
    let att = Attention::new(&mut store, &Init::new(1), "att", 2, 2, 2, 2, 1).unwrap();
    // W_K zero makes every key identical; W_V identity exposes the rows of Y.
    *store.get_mut(att.w_key) = Tensor::zeros(&[2, 2]);
    *store.get_mut(att.w_value) = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let x = tape.constant(Tensor::from_rows(&[vec![0.3, -1.0]]).unwrap());
    let y = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -4.0]]).unwrap());
    let out = att.cross(&mut tape, &bound, x, y).unwrap();
    assert_eq!(tape.value(out.values).data(), &[2.0, -1.0]);
}

#[test]
fn self_attention_is_cross_with_itself_and_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut store = ParamStore::<f64>::new();
    let att = Attention::new(&mut store, &Init::new(3), "att", 3, 3, 4, 4, 1).unwrap();
    let x = random(&mut rng, &[5, 3]);
    let perm = [3, 0, 4, 1, 2];
    let xp = Tensor::from_rows(&perm.iter().map(|&p| x.row(p).to_vec()).collect::<Vec<_>>()).unwrap();
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let xv = tape.constant(x);
    let a = att.self_attention(&mut tape, &bound, xv).unwrap();
    let b = att.cross(&mut tape, &bound, xv, xv).unwrap();
    assert_eq!(tape.value(a.values), tape.value(b.values));
    let xpv = tape.constant(xp);
    let c = att.self_attention(&mut tape, &bound, xpv).unwrap();
    for (i, &p) in perm.iter().enumerate() {
        for (u, v) in tape.value(c.values).row(i).iter().zip(tape.value(a.values).row(p)) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn multihead_one_head_is_cross_and_block_diagonal_decomposes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, &[3, 4]);
    let y = random(&mut rng, &[5, 4]);

    let mut store = ParamStore::<f64>::new();
    let one = Attention::new(&mut store, &Init::new(3), "att", 4, 4, 4, 4, 1).unwrap();
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
    let a = one.multihead(&mut tape, &bound, xv, yv).unwrap();
    let b = one.cross(&mut tape, &bound, xv, yv).unwrap();
    assert_eq!(tape.value(a.values), tape.value(b.values));

    // Block-diagonal projections: head h only sees input features 2h..2h+2.
    let mut store = ParamStore::<f64>::new();
    let two = Attention::new(&mut store, &Init::new(3), "att", 4, 4, 4, 4, 2).unwrap();
    let blocks: Vec<[Tensor<f64>; 3]> = (0..2)
        .map(|_| [random(&mut rng, &[2, 2]), random(&mut rng, &[2, 2]), random(&mut rng, &[2, 2])])
        .collect();
    for (slot, id) in [two.w_query, two.w_key, two.w_value].into_iter().enumerate() {
        let mut m = Tensor::zeros(&[4, 4]);
        for (h, blk) in blocks.iter().enumerate() {
            for r in 0..2 {
                for c in 0..2 {
                    m.data_mut()[(2 * h + r) * 4 + 2 * h + c] = blk[slot].get2(r, c);
                }
            }
        }
        *store.get_mut(id) = m;
    }
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
    let full = two.multihead(&mut tape, &bound, xv, yv).unwrap();
    for w in &full.weights {
        for r in 0..3 {
            let s: f64 = tape.value(*w).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
    for (h, blk) in blocks.iter().enumerate() {
        let xs = ops::slice_cols(&x, 2 * h, 2 * h + 2).unwrap();
        let ys = ops::slice_cols(&y, 2 * h, 2 * h + 2).unwrap();
        let want = attention_reference(&xs, &ys, &blk[0], &blk[1], &blk[2]);
        for (i, row) in want.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!((tape.value(full.values).get2(i, 2 * h + j) - v).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn auc_matches_all_pairs_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        // coarse grid so ties are common
        let scores: Vec<f64> = (0..50).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
        let mut labels: Vec<u8> = (0..50).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..50 {
            for j in 0..50 {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        assert!((metrics::auc(&scores, &labels).unwrap() - wins / pairs).abs() < 1e-12);
    }
}

#[test]
fn confusion_and_rates_match_per_sample_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let scores: Vec<f64> = (0..100).map(|_| rng.random()).collect();
    let labels: Vec<u8> = (0..100).map(|_| rng.random_range(0..2)).collect();
    let c = metrics::confusion(&scores, &labels, 0.5).unwrap();
    let mut want = ConfusionCounts::default();
    for (s, l) in scores.iter().zip(&labels) {
        let pred = u8::from(*s >= 0.5);
        match (pred, *l) {
            (1, 1) => want.tp += 1,
            (1, 0) => want.fp += 1,
            (0, 0) => want.tn += 1,
            _ => want.fn_ += 1,
        }
    }
    assert_eq!(c, want);
    assert_eq!(c.total(), 100);
    let correct = scores.iter().zip(&labels).filter(|(s, l)| u8::from(**s >= 0.5) == **l).count();
    assert!((c.accuracy().value - correct as f64 / 100.0).abs() < 1e-12);
    let (p, r) = (c.precision().value, c.recall().value);
    assert!((c.f1().value * (p + r) - 2.0 * p * r).abs() < 1e-12);
}

/// Arithmetic operations tallied by walking the same loops as a naive
/// implementation, one per multiply, add, compare, or nonlinearity.
mod counted {
    pub fn conv(c_in: usize, c_out: usize, k: usize, l_out: usize) -> u64 {
        let mut n = 0;
        for _ in 0..c_out {
            for _ in 0..l_out {
                for _ in 0..c_in * k {
                    n += 2; // multiply, accumulate
                }
                n += 1; // bias
            }
        }
        n
    }

    pub fn pool_max(c: usize, bounds: &[(usize, usize)]) -> u64 {
        let mut n = 0;
        for _ in 0..c {
            for &(_, len) in bounds {
                for _ in 1..len {
                    n += 1;
                }
            }
        }
        n
    }

    pub fn matmul(m: usize, k: usize, n: usize) -> u64 {
        let mut ops = 0;
        for _ in 0..m {
            for _ in 0..n {
                for _ in 0..k {
                    ops += 2;
                }
            }
        }
        ops
    }

    pub fn softmax(m: usize, n: usize) -> u64 {
        let mut ops = 0usize;
        for _ in 0..m {
            ops += n.saturating_sub(1); // running max
            ops += 2 * n; // shift, exp
            ops += n.saturating_sub(1); // normalizer
            ops += n; // divide
        }
        ops as u64
    }

    pub fn lstm_step(h: usize, d: usize) -> u64 {
        let mut ops = 0;
        for _gate in 0..4 {
            ops += matmul(h, h + d, 1) + h as u64; // affine
            ops += h as u64; // nonlinearity
        }
        for _ in 0..h {
            ops += 5; // f·c, i·c̃, sum, tanh, o·tanh
        }
        ops
    }
}

#[test]
fn flop_counter_matches_loop_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    // conv layer shapes: (c_in, c_out, k, len)
    for (c_in, c_out, k, len) in [(1, 1, 1, 1), (2, 8, 3, 10), (4, 8, 5, 12), (3, 2, 2, 7), (6, 16, 4, 30)] {
        let mut store = ParamStore::<f64>::new();
        let conv = Conv1d::new(&mut store, &Init::new(0), "c", c_in, c_out, k, ConvSpec::default()).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let x = tape.constant(random(&mut rng, &[c_in, len]));
        let mark = tape.len();
        let y = conv.forward(&mut tape, &bound, x).unwrap();
        assert_eq!(tape.flops_since(mark), counted::conv(c_in, c_out, k, len - k + 1));
        let mark = tape.len();
        tape.region_pool(y, 3, PoolMode::Max).unwrap();
        let l_out = len - k + 1;
        let bounds = ops::region_bounds(l_out, 3.min(l_out));
        assert_eq!(tape.flops_since(mark), counted::pool_max(c_out, &bounds));
    }
    for (h, d) in [(1, 1), (3, 2), (8, 4), (16, 16), (32, 5)] {
        let mut store = ParamStore::<f64>::new();
        let cell = LstmCell::new(&mut store, &Init::new(0), "l", d, h).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let s = LstmState::zeros(&mut tape, h);
        let x = tape.constant(random(&mut rng, &[d]));
        let mark = tape.len();
        cell.step(&mut tape, &bound, s, x).unwrap();
        assert_eq!(tape.flops_since(mark), counted::lstm_step(h, d));
    }
    for (tx, ty, dx, dy, dk, dv) in [(1, 1, 1, 1, 1, 1), (3, 4, 2, 5, 4, 2), (6, 4, 8, 8, 16, 16), (5, 5, 3, 3, 2, 7), (2, 9, 4, 1, 3, 3)] {
        let mut store = ParamStore::<f64>::new();
        let att = Attention::new(&mut store, &Init::new(0), "a", dx, dy, dk, dv, 1).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let x = tape.constant(random(&mut rng, &[tx, dx]));
        let y = tape.constant(random(&mut rng, &[ty, dy]));
        let mark = tape.len();
        att.cross(&mut tape, &bound, x, y).unwrap();
        let want = counted::matmul(tx, dx, dk)
            + counted::matmul(ty, dy, dk)
            + counted::matmul(ty, dy, dv)
            + counted::matmul(tx, dk, ty)
            + (tx * ty) as u64 // scale
            + counted::softmax(tx, ty)
            + counted::matmul(tx, ty, dv);
        assert_eq!(tape.flops_since(mark), want);
    }
}
