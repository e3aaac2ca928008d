//! Analytic gradients against central finite differences.

mod common;

use common::model;
use mtrnn::gradcheck::{check_gradients, relative_error};
use mtrnn::lstm::{encode_sequence, lstm_step, LstmParams, LstmState};
use mtrnn::{Architecture, Exec, ParamStore, Shape, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
/// Denominator floors of the relative error. Roundoff in the difference
/// quotient is about `1e-16·|L|/ε`, so gradients below the floor are held to
/// an absolute `tolerance × floor` instead.
const OP_FLOOR: f64 = 1e-6;
const MODEL_FLOOR: f64 = EPS;
const OP_TOLERANCE: f64 = 1e-6;
const MODEL_TOLERANCE: f64 = 1e-5;

fn random(store: &mut ParamStore, name: &str, shape: Shape, rng: &mut ChaCha8Rng) {
    store.add_uniform(name, shape, 1.0, rng);
}

/// A loss that is sensitive to every coordinate of `out`.
fn reduce(tape: &mut Tape, out: Var, weights: Var) -> Var {
    let prod = tape.mul(out, weights).unwrap();
    let n = tape.value(prod).len();
    let ones = tape.constant(Tensor::filled(Shape::Matrix(1, n), 1.0));
    let s = tape.matmul(ones, prod).unwrap();
    let s = tape.tanh(s);
    tape.softmax_cross_entropy(s, 0).unwrap()
}

fn check(store: &ParamStore, floor: f64, loss: impl Fn(&mut Tape, &ParamStore) -> mtrnn::Result<Var> + Sync + Send) -> f64 {
    let r = check_gradients(store, loss, EPS, floor, Exec::default()).unwrap();
    assert!(r.coordinates > 0);
    r.max_relative_error
}

fn op_store(seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    random(&mut s, "a", Shape::Vector(4), &mut rng);
    random(&mut s, "b", Shape::Vector(4), &mut rng);
    random(&mut s, "m", Shape::Matrix(4, 4), &mut rng);
    random(&mut s, "n", Shape::Matrix(3, 4), &mut rng);
    random(&mut s, "r", Shape::Vector(4), &mut rng);
    s
}

fn vars(tape: &mut Tape, s: &ParamStore) -> [Var; 5] {
    ["a", "b", "m", "n", "r"].map(|n| tape.param(s, s.id(n).unwrap()))
}

#[test]
fn elementwise_ops_match_finite_differences() {
    let s = op_store(1);
    type Op = fn(&mut Tape, Var, Var) -> Var;
    let ops: [(&str, Op); 6] = [
        ("add", |t, a, b| t.add(a, b).unwrap()),
        ("sub", |t, a, b| t.sub(a, b).unwrap()),
        ("mul", |t, a, b| t.mul(a, b).unwrap()),
        ("sigmoid", |t, a, _| t.sigmoid(a)),
        ("tanh", |t, a, _| t.tanh(a)),
        ("scale", |t, a, _| t.scale(a, -2.5)),
    ];
    for (name, op) in ops {
        let err = check(&s, OP_FLOOR, |tape, s| {
            let [a, b, _, _, r] = vars(tape, s);
            let out = op(tape, a, b);
            Ok(reduce(tape, out, r))
        });
        assert!(err < OP_TOLERANCE, "{name}: {err:e}");
    }
}

#[test]
fn matmul_concat_row_and_softmax_match_finite_differences() {
    let s = op_store(2);
    let err = check(&s, OP_FLOOR, |tape, s| {
        let [a, _, m, n, _] = vars(tape, s);
        let ma = tape.matmul(m, a)?;
        let t = tape.tanh(ma);
        let z = tape.matmul(n, t)?;
        tape.softmax_cross_entropy(z, 1)
    });
    assert!(err < OP_TOLERANCE, "matmul/cross-entropy: {err:e}");

    let err = check(&s, OP_FLOOR, |tape, s| {
        let [a, b, _, _, _] = vars(tape, s);
        let ab = tape.concat(a, b)?;
        let w = tape.constant(Tensor::filled(Shape::Matrix(3, 8), 0.3));
        let z = tape.matmul(w, ab)?;
        let nr = tape.row(s, s.id("n").unwrap(), 2)?;
        let zz = tape.concat(z, nr)?;
        let p = tape.softmax(zz)?;
        tape.neg_log(p, 4)
    });
    assert!(err < OP_TOLERANCE, "concat/row/softmax/neg_log: {err:e}");

    let err = check(&s, OP_FLOOR, |tape, s| {
        let [a, b, _, _, r] = vars(tape, s);
        let x = tape.mul(a, r)?;
        let y = tape.sigmoid(b);
        let l1 = tape.softmax_cross_entropy(x, 0)?;
        let l2 = tape.softmax_cross_entropy(y, 3)?;
        let l3 = tape.softmax_cross_entropy(x, 2)?;
        tape.sum_scalars(&[l1, l2, l3])
    });
    assert!(err < OP_TOLERANCE, "sum_scalars: {err:e}");
}

fn cell(d: usize, e: usize, seed: u64) -> (ParamStore, LstmParams, Vec<Tensor>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = LstmParams::init(&mut store, "cell", e, d, &mut rng);
    // Scale everything up so the check exercises the nonlinear regime.
    for id in p.ids() {
        for v in store.get_mut(id).value.data_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
    let xs = (0..5)
        .map(|_| Tensor::vector((0..e).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect();
    (store, p, xs)
}

#[test]
fn lstm_step_matches_finite_differences() {
    let (store, p, xs) = cell(3, 2, 3);
    let err = check(&store, OP_FLOOR, |tape, s| {
        let x = tape.constant(xs[0].clone());
        let h = tape.constant(Tensor::vector(vec![0.3, -0.5, 0.1]));
        let c = tape.constant(Tensor::vector(vec![-0.7, 0.2, 0.9]));
        let next = lstm_step(tape, s, &p, x, &LstmState { h, c })?;
        let both = tape.concat(next.h, next.c)?;
        tape.softmax_cross_entropy(both, 1)
    });
    assert!(err < OP_TOLERANCE, "{err:e}");
}

#[test]
fn five_step_lstm_matches_finite_differences() {
    let (store, p, xs) = cell(4, 3, 4);
    let err = check(&store, MODEL_FLOOR, |tape, s| {
        let xs: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let enc = encode_sequence(tape, s, &p, &xs)?;
        let hs = tape.concat(enc.hidden[1], enc.last.h)?;
        tape.softmax_cross_entropy(hs, 5)
    });
    assert!(err < MODEL_TOLERANCE, "{err:e}");
}

fn architecture_error(arch: Architecture, len: usize, seed: u64) -> f64 {
    let mut m = model(arch, 12, 8, 6, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    // Move the weights away from the small-init regime.
    let ids: Vec<_> = m.store.ids().collect();
    for id in ids {
        for v in m.store.get_mut(id).value.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(1..12)).collect();
    let mut worst: f64 = 0.0;
    for task in 0..m.task_count() {
        let r = check_gradients(
            &m.store,
            |tape, s| m.loss_in(tape, s, task, &tokens, 1),
            EPS,
            MODEL_FLOOR,
            Exec::default(),
        )
        .unwrap();
        worst = worst.max(r.max_relative_error);
    }
    worst
}

#[test]
fn every_architecture_matches_finite_differences() {
    for arch in Architecture::ALL {
        let err = architecture_error(arch, 5, 7);
        assert!(err < MODEL_TOLERANCE, "{arch}: {err:e}");
    }
}

#[test]
fn short_inputs_match_finite_differences() {
    for (arch, len) in [
        (Architecture::Single, 4),
        (Architecture::Coupled, 3),
        (Architecture::Shared, 3),
    ] {
        let err = architecture_error(arch, len, 11);
        assert!(err < MODEL_TOLERANCE, "{arch} on {len} tokens: {err:e}");
    }
}

#[test]
fn relative_error_uses_the_floor() {
    assert_eq!(relative_error(1.0, 1.0, 1e-6), 0.0);
    assert!((relative_error(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-15);
    assert!((relative_error(1e-9, 0.0, 1e-6) - 1e-3).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// A parameter used k times receives the sum of k per-use gradients:
    /// sharing one parameter equals k distinct copies whose gradients are
    /// added afterwards.
    #[test]
    fn reused_parameter_gradient_is_the_sum_of_copies(
        values in prop::collection::vec(-2.0f64..2.0, 3),
        xs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..5),
    ) {
        let mut shared = ParamStore::new();
        let p = shared.add(mtrnn::Parameter::new("p", Tensor::vector(values.clone())));
        let mut copies = ParamStore::new();
        let ids: Vec<_> = (0..xs.len())
            .map(|k| copies.add(mtrnn::Parameter::new(format!("p{k}"), Tensor::vector(values.clone()))))
            .collect();

        let build = |tape: &mut Tape, store: &ParamStore, pick: &dyn Fn(usize) -> mtrnn::ParamId| {
            let mut acc = None;
            for (k, x) in xs.iter().enumerate() {
                let v = tape.param(store, pick(k));
                let x = tape.constant(Tensor::vector(x.clone()));
                let t = tape.mul(v, x).unwrap();
                let t = tape.tanh(t);
                acc = Some(match acc {
                    None => t,
                    Some(a) => tape.add(a, t).unwrap(),
                });
            }
            tape.softmax_cross_entropy(acc.unwrap(), 0).unwrap()
        };

        let mut tape = Tape::new();
        let l = build(&mut tape, &shared, &|_| p);
        tape.backward(l, &mut shared).unwrap();
        let mut tape = Tape::new();
        let l = build(&mut tape, &copies, &|k| ids[k]);
        tape.backward(l, &mut copies).unwrap();

        let mut summed = vec![0.0; 3];
        for &id in &ids {
            for (s, g) in summed.iter_mut().zip(copies.get(id).gradient.data()) {
                *s += g;
            }
        }
        for (a, b) in shared.get(p).gradient.data().iter().zip(&summed) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}
