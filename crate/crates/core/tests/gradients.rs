//! Central finite-difference checks for every differentiable operation, 20
//! random instances each.

use qrcl_core::attention::Attention;
use qrcl_core::gradcheck::{weighted_sum, GradCheck};
use qrcl_core::objectives::{self, QuantileLossSpec};
use qrcl_core::ops::{ConvSpec, PoolMode};
use qrcl_core::qrcnn::{QrcnnBlock, QrcnnConfig, QuantileHead};
use qrcl_core::recurrent::{Baseline, BaselineConfig, BaselineKind, LstmCell, LstmState};
use qrcl_core::{Bound, Init, ParamStore, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: u64 = 20;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn assert_check<F>(name: &str, inputs: &[Tensor<f64>], build: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let report = GradCheck::default().run(inputs, build).unwrap();
    assert!(report.checked > 0, "{name}: nothing checked");
    assert!(report.passed(), "{name}: {:?}", report.failures);
}

/// Checks a layer with respect to its parameters and its data inputs.
fn assert_layer<F>(name: &str, store: &ParamStore<f64>, data: Vec<Tensor<f64>>, build: F)
where
    F: Fn(&mut Tape<f64>, &Bound, &[Var]) -> Result<Var>,
{
    let n = store.len();
    let mut inputs: Vec<Tensor<f64>> = store.iter().map(|(_, t)| t.clone()).collect();
    inputs.extend(data);
    assert_check(name, &inputs, |tape, vars| {
        let bound = Bound::from_vars(vars[..n].to_vec());
        build(tape, &bound, &vars[n..])
    });
}

/// Randomizes zero-initialized biases so every gradient path is exercised.
fn jitter(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.get(id).shape().to_vec();
        let noise = random(rng, &shape);
        store.get_mut(id).add_assign(&noise.map(|v| 0.3 * v));
    }
}

#[test]
fn elementwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..TRIALS {
        let a = random(&mut rng, &[2, 3]);
        let b = random(&mut rng, &[2, 3]);
        let s = random(&mut rng, &[1]);
        assert_check("elementwise", &[a, b, s], |tape, v| {
            let p = tape.mul(v[0], v[1])?;
            let q = tape.sub(p, v[2])?;
            let r = tape.add(q, v[0])?;
            let sg = tape.sigmoid(r);
            let th = tape.tanh(v[1]);
            let sp = tape.softplus(v[0]);
            let m = tape.mul(sg, th)?;
            let o = tape.add(m, sp)?;
            let o = tape.scale(o, 1.7);
            let o = tape.add_const(o, -0.2);
            weighted_sum(tape, o, trial)
        });
    }
}

#[test]
fn matmul_transpose_and_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..TRIALS {
        let a = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[4, 2]);
        let x = random(&mut rng, &[4]);
        let bias = random(&mut rng, &[2]);
        assert_check("matmul", &[a, b, x, bias], |tape, v| {
            let ab = tape.matmul(v[0], v[1])?;
            let ab = tape.add_row_bias(ab, v[3])?;
            let t = tape.transpose(ab)?;
            let ax = tape.matvec(v[0], v[2])?;
            let mr = tape.mean_rows(ab)?;
            let l1 = weighted_sum(tape, t, trial)?;
            let l2 = weighted_sum(tape, ax, trial + 100)?;
            let l3 = weighted_sum(tape, mr, trial + 200)?;
            let m = tape.mean(ax);
            let s = tape.add(l1, l2)?;
            let s = tape.add(s, l3)?;
            tape.add(s, m)
        });
    }
}

#[test]
fn softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..TRIALS {
        let a = random(&mut rng, &[3, 5]).map(|v| 3.0 * v);
        assert_check("softmax", &[a], |tape, v| {
            let s = tape.softmax_rows(v[0])?;
            weighted_sum(tape, s, trial)
        });
    }
}

#[test]
fn shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..TRIALS {
        let a = random(&mut rng, &[2, 3]);
        let b = random(&mut rng, &[2, 2]);
        let c = random(&mut rng, &[3]);
        assert_check("shape ops", &[a, b, c], |tape, v| {
            let cc = tape.concat_cols(&[v[0], v[1]])?;
            let sl = tape.slice_cols(cc, 1, 4)?;
            let r = tape.row(sl, 1)?;
            let st = tape.stack_rows(&[r, v[2]])?;
            let flat = tape.reshape(st, &[6])?;
            let cat = tape.concat(&[flat, v[2]])?;
            let i = tape.index(cat, 4)?;
            let l = weighted_sum(tape, cat, trial)?;
            let sq = tape.mul(i, i)?;
            tape.add(l, sq)
        });
    }
}

#[test]
fn conv1d() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..TRIALS {
        let stride = 1 + (trial as usize % 2);
        let dilation = 1 + (trial as usize / 2 % 2);
        let pad_left = trial as usize % 3;
        let x = random(&mut rng, &[2, 9]);
        let w = random(&mut rng, &[3, 2, 3]);
        let b = random(&mut rng, &[3]);
        let spec = ConvSpec {
            stride,
            dilation,
            pad_left,
        };
        assert_check("conv1d", &[x, w, b], |tape, v| {
            let y = tape.conv1d(v[0], v[1], v[2], spec)?;
            weighted_sum(tape, y, trial)
        });
    }
}

#[test]
fn region_pool() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..TRIALS {
        let mode = if trial % 2 == 0 { PoolMode::Max } else { PoolMode::Avg };
        let len = 3 + trial as usize % 6;
        let x = random(&mut rng, &[2, len]);
        let regions = 1 + trial as usize % 4;
        assert_check("region_pool", &[x], |tape, v| {
            let y = tape.region_pool(v[0], regions, mode)?;
            weighted_sum(tape, y, trial)
        });
    }
}

#[test]
fn qrcnn_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..TRIALS {
        let mut store = ParamStore::new();
        let mut cfg = QrcnnConfig::new(2);
        cfg.out_channels = 2;
        cfg.pool = if trial % 2 == 0 { PoolMode::Max } else { PoolMode::Avg };
        let block = QrcnnBlock::new(&mut store, &Init::new(trial), "q", cfg).unwrap();
        jitter(&mut store, &mut rng);
        let x = random(&mut rng, &[2, 7]);
        assert_layer("qrcnn", &store, vec![x], |tape, bound, v| {
            let y = block.forward(tape, bound, v[0])?;
            weighted_sum(tape, y, trial)
        });
    }
}

#[test]
fn lstm_step_and_sequence() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..TRIALS {
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, &Init::new(trial), "lstm", 2, 3).unwrap();
        jitter(&mut store, &mut rng);
        let h = random(&mut rng, &[3]);
        let c = random(&mut rng, &[3]);
        let x = random(&mut rng, &[2]);
        assert_layer("lstm_step", &store, vec![h, c, x], |tape, bound, v| {
            let s = cell.step(tape, bound, LstmState { h: v[0], c: v[1] }, v[2])?;
            let a = weighted_sum(tape, s.h, trial)?;
            let b = weighted_sum(tape, s.c, trial + 50)?;
            tape.add(a, b)
        });
        let xs = random(&mut rng, &[4, 2]);
        assert_layer("lstm_sequence", &store, vec![xs], |tape, bound, v| {
            let init = LstmState::zeros(tape, 3);
            let (hs, _) = cell.sequence(tape, bound, v[0], init)?;
            weighted_sum(tape, hs, trial)
        });
    }
}

#[test]
fn baselines() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..TRIALS {
        for kind in [BaselineKind::PlainRnn, BaselineKind::CnnOnly, BaselineKind::Tcn] {
            let mut store = ParamStore::new();
            let cfg = BaselineConfig::new(kind, 2, 3);
            let model = Baseline::new(&mut store, &Init::new(trial), "b", &cfg).unwrap();
            jitter(&mut store, &mut rng);
            let x = random(&mut rng, &[6, 2]);
            assert_layer("baseline", &store, vec![x], |tape, bound, v| {
                let y = model.forward(tape, bound, v[0])?;
                weighted_sum(tape, y, trial)
            });
        }
    }
}

#[test]
fn attention_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for trial in 0..TRIALS {
        let mut store = ParamStore::new();
        let att = Attention::new(&mut store, &Init::new(trial), "att", 3, 2, 4, 4, 2).unwrap();
        let x = random(&mut rng, &[3, 3]);
        let y = random(&mut rng, &[4, 2]);
        assert_layer("cross", &store, vec![x.clone(), y.clone()], |tape, bound, v| {
            let out = att.cross(tape, bound, v[0], v[1])?;
            weighted_sum(tape, out.values, trial)
        });
        assert_layer("multihead", &store, vec![x, y], |tape, bound, v| {
            let out = att.multihead(tape, bound, v[0], v[1])?;
            weighted_sum(tape, out.values, trial)
        });

        let mut store = ParamStore::new();
        let att = Attention::new(&mut store, &Init::new(trial), "att", 3, 3, 4, 2, 1).unwrap();
        let x = random(&mut rng, &[4, 3]);
        assert_layer("self", &store, vec![x], |tape, bound, v| {
            let out = att.self_attention(tape, bound, v[0])?;
            weighted_sum(tape, out.values, trial)
        });
    }
}

#[test]
fn quantile_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..TRIALS {
        let mut store = ParamStore::new();
        let head = QuantileHead::new(&mut store, &Init::new(trial), "head", 5, vec![0.1, 0.5, 0.9]).unwrap();
        jitter(&mut store, &mut rng);
        let h = random(&mut rng, &[5]);
        assert_layer("quantile_head", &store, vec![h], |tape, bound, v| {
            let out = head.forward(tape, bound, v[0])?;
            let a = weighted_sum(tape, out.quantiles, trial)?;
            let b = weighted_sum(tape, out.raw, trial + 7)?;
            tape.add(a, b)
        });
    }
}

#[test]
fn pinball_bce_and_combined() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let spec = QuantileLossSpec::new(vec![0.1, 0.5, 0.9]).unwrap();
    for _ in 0..TRIALS {
        let pred = random(&mut rng, &[3]).map(|v| 2.0 * v);
        let y: f64 = rng.random_range(-1.5..1.5);
        assert_check("pinball", std::slice::from_ref(&pred), |tape, v| {
            objectives::pinball_loss(tape, v[0], y, &spec)
        });
        let p = Tensor::scalar(rng.random_range(0.05..0.95));
        let label = f64::from(rng.random_range(0..2u8));
        assert_check("bce", &[p], |tape, v| objectives::bce_loss(tape, v[0], label));
        let lambda = rng.random_range(0.0..=1.0);
        assert_check("combined", &[pred], |tape, v| {
            objectives::combined_loss(tape, v[0], label, lambda, &spec)
        });
    }
}
