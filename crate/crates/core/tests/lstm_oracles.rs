mod common;

use common::{max_abs_diff, RefLstm};
use mtrnn::lstm::{embed, encode_bidirectional, encode_sequence, lstm_step, lstm_step_detailed, EmbeddingTable, LstmParams, LstmState};
use mtrnn::{ParamStore, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cell(d: usize, e: usize, seed: u64, scale: f64) -> (ParamStore, LstmParams) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = LstmParams::init(&mut store, "cell", e, d, &mut rng);
    for id in p.ids() {
        for v in store.get_mut(id).value.data_mut() {
            *v = scale * rng.gen_range(-1.0..1.0);
        }
    }
    (store, p)
}

fn put(store: &mut ParamStore, name: &str, data: &[f64]) {
    let p = store.by_name_mut(name).unwrap();
    p.value.data_mut().copy_from_slice(data);
}

fn s(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn two_unit_cell_matches_scalar_oracle() {
    let (mut store, p) = cell(2, 1, 0, 0.0);
    put(&mut store, "cell.w_i", &[0.5, -0.3]);
    put(&mut store, "cell.w_f", &[0.2, 0.4]);
    put(&mut store, "cell.w_o", &[-0.6, 0.1]);
    put(&mut store, "cell.w_c", &[0.9, -0.8]);
    put(&mut store, "cell.u_i", &[0.1, 0.2, -0.1, 0.3]);
    put(&mut store, "cell.u_f", &[-0.2, 0.1, 0.05, -0.4]);
    put(&mut store, "cell.u_o", &[0.3, -0.3, 0.2, 0.1]);
    put(&mut store, "cell.u_c", &[0.7, 0.0, -0.5, 0.25]);
    put(&mut store, "cell.v_i", &[0.15, -0.25]);
    put(&mut store, "cell.v_f", &[0.35, 0.45]);
    put(&mut store, "cell.v_o", &[-0.55, 0.65]);
    put(&mut store, "cell.b_i", &[0.01, -0.02]);
    put(&mut store, "cell.b_f", &[1.0, 0.8]);
    put(&mut store, "cell.b_o", &[0.03, 0.0]);
    put(&mut store, "cell.b_c", &[-0.1, 0.2]);

    let (h0, h1, c0, c1, x) = (0.2, -0.4, 0.6, -0.1, 1.3);
    // Unit 0
    let i0 = s(0.5 * x + 0.1 * h0 + 0.2 * h1 + 0.15 * c0 + 0.01);
    let f0 = s(0.2 * x - 0.2 * h0 + 0.1 * h1 + 0.35 * c0 + 1.0);
    let g0 = (0.9 * x + 0.7 * h0 + 0.0 * h1 - 0.1).tanh();
    let cn0 = f0 * c0 + i0 * g0;
    let o0 = s(-0.6 * x + 0.3 * h0 - 0.3 * h1 - 0.55 * cn0 + 0.03);
    let hn0 = o0 * cn0.tanh();
    // Unit 1
    let i1 = s(-0.3 * x - 0.1 * h0 + 0.3 * h1 - 0.25 * c1 - 0.02);
    let f1 = s(0.4 * x + 0.05 * h0 - 0.4 * h1 + 0.45 * c1 + 0.8);
    let g1 = (-0.8 * x - 0.5 * h0 + 0.25 * h1 + 0.2).tanh();
    let cn1 = f1 * c1 + i1 * g1;
    let o1 = s(0.1 * x + 0.2 * h0 + 0.1 * h1 + 0.65 * cn1 + 0.0);
    let hn1 = o1 * cn1.tanh();

    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::vector(vec![x]));
    let h = tape.constant(Tensor::vector(vec![h0, h1]));
    let c = tape.constant(Tensor::vector(vec![c0, c1]));
    let out = lstm_step_detailed(&mut tape, &store, &p, xv, &LstmState { h, c }).unwrap();
    let close = |v: Var, want: [f64; 2]| assert!(max_abs_diff(tape.value(v).data(), &want) < 1e-12);
    close(out.input_gate, [i0, i1]);
    close(out.forget_gate, [f0, f1]);
    close(out.output_gate, [o0, o1]);
    close(out.candidate, [g0, g1]);
    close(out.state.c, [cn0, cn1]);
    close(out.state.h, [hn0, hn1]);
}

#[test]
fn sequence_matches_reference_loop() {
    let (store, p) = cell(5, 3, 9, 0.6);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let xs: Vec<Vec<f64>> = (0..7).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let want = RefLstm::load(&store, "cell").run(&xs);
    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|x| tape.constant(Tensor::vector(x.clone()))).collect();
    let enc = encode_sequence(&mut tape, &store, &p, &vars).unwrap();
    for (h, w) in enc.hidden.iter().zip(&want) {
        assert!(max_abs_diff(tape.value(*h).data(), w) < 1e-12);
    }
}

#[test]
fn three_steps_equal_manual_chain_bitwise() {
    let (store, p) = cell(4, 3, 2, 0.5);
    let xs = [
        Tensor::vector(vec![0.1, -0.2, 0.3]),
        Tensor::vector(vec![0.9, 0.0, -0.4]),
        Tensor::vector(vec![-0.5, 0.5, 0.25]),
    ];
    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
    let enc = encode_sequence(&mut tape, &store, &p, &vars).unwrap();

    let mut manual = Tape::new();
    let mut state = LstmState::zeros(&mut manual, 4);
    let mut hs = vec![];
    for x in &xs {
        let x = manual.constant(x.clone());
        state = lstm_step(&mut manual, &store, &p, x, &state).unwrap();
        hs.push(state.h);
    }
    assert_eq!(tape.value(enc.last.c), manual.value(state.c));
    for (a, b) in enc.hidden.iter().zip(&hs) {
        assert_eq!(tape.value(*a), manual.value(*b));
    }
}

#[test]
fn length_one_sequence_is_one_step() {
    let (store, p) = cell(3, 2, 5, 0.5);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![0.4, -0.7]));
    let enc = encode_sequence(&mut tape, &store, &p, &[x]).unwrap();
    let zero = LstmState::zeros(&mut tape, 3);
    let step = lstm_step(&mut tape, &store, &p, x, &zero).unwrap();
    assert_eq!(tape.value(enc.last.h), tape.value(step.h));
    assert_eq!(tape.value(enc.last.c), tape.value(step.c));
}

#[test]
fn zero_parameters_give_zero_hidden_state() {
    let (store, p) = cell(3, 2, 5, 0.0);
    let mut tape = Tape::new();
    let xs: Vec<Var> = (0..4).map(|k| tape.constant(Tensor::vector(vec![k as f64, -1.0]))).collect();
    let enc = encode_sequence(&mut tape, &store, &p, &xs).unwrap();
    assert!(tape.value(enc.last.h).data().iter().all(|&v| v == 0.0));
}

#[test]
fn bidirectional_is_two_encodes_plus_reversal() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fwd = LstmParams::init(&mut store, "fwd", 3, 4, &mut rng);
    let bwd = LstmParams::init(&mut store, "bwd", 3, 4, &mut rng);
    let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();

    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|x| tape.constant(Tensor::vector(x.clone()))).collect();
    let both = encode_bidirectional(&mut tape, &store, &fwd, &bwd, &vars).unwrap();

    let f = RefLstm::load(&store, "fwd").run(&xs);
    let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
    let mut b = RefLstm::load(&store, "bwd").run(&rev);
    b.reverse();
    for t in 0..4 {
        let want: Vec<f64> = f[t].iter().chain(&b[t]).copied().collect();
        assert!(max_abs_diff(tape.value(both[t]).data(), &want) < 1e-12);
    }
}

#[test]
fn palindrome_with_tied_directions_is_mirror_symmetric() {
    let (store, p) = cell(3, 2, 8, 0.7);
    let pal = [[0.1, 0.2], [-0.3, 0.4], [0.5, 0.5], [-0.3, 0.4], [0.1, 0.2]];
    let mut tape = Tape::new();
    let vars: Vec<Var> = pal.iter().map(|x| tape.constant(Tensor::vector(x.to_vec()))).collect();
    let out = encode_bidirectional(&mut tape, &store, &p, &p, &vars).unwrap();
    let t_len = pal.len();
    for t in 0..t_len {
        let a = tape.value(out[t]).data();
        let b = tape.value(out[t_len - 1 - t]).data();
        assert_eq!(&a[..3], &b[3..]);
        assert_eq!(&a[3..], &b[..3]);
    }
}

#[test]
fn embedding_lookup_and_mismatched_directions() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let table = EmbeddingTable::init(&mut store, "emb", 5, 3, &mut rng);
    let mut tape = Tape::new();
    let rows = embed(&mut tape, &store, &table, &[0, 4]).unwrap();
    assert_eq!(tape.value(rows[0]).data(), &[0.0; 3]);
    assert_eq!(tape.value(rows[1]).data(), store.get(table.param).value.row(4));

    let a = LstmParams::init(&mut store, "a", 3, 2, &mut rng);
    let b = LstmParams::init(&mut store, "b", 3, 4, &mut rng);
    let err = encode_bidirectional(&mut tape, &store, &a, &b, &rows).unwrap_err();
    assert!(matches!(err, mtrnn::Error::Dimension { .. }));
}

#[test]
fn encoding_is_deterministic() {
    let (store, p) = cell(4, 2, 6, 0.5);
    let run = || {
        let mut tape = Tape::new();
        let xs: Vec<Var> = (0..6)
            .map(|k| tape.constant(Tensor::vector(vec![(k as f64).sin(), (k as f64).cos()])))
            .collect();
        let enc = encode_sequence(&mut tape, &store, &p, &xs).unwrap();
        tape.value(enc.last.h).clone()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gates_in_unit_interval_and_hidden_bounded(
        seed in 0u64..1000,
        xs in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..6),
    ) {
        let (store, p) = cell(4, 2, seed, 1.0);
        let mut tape = Tape::new();
        let mut state = LstmState::zeros(&mut tape, 4);
        for x in &xs {
            let x = tape.constant(Tensor::vector(x.clone()));
            let out = lstm_step_detailed(&mut tape, &store, &p, x, &state).unwrap();
            for g in [out.input_gate, out.forget_gate, out.output_gate] {
                prop_assert!(tape.value(g).data().iter().all(|&v| v > 0.0 && v < 1.0));
            }
            prop_assert!(tape.value(out.state.h).data().iter().all(|&v| v.abs() < 1.0));
            state = out.state;
        }
    }

    #[test]
    fn peephole_matrices_have_no_off_diagonal_mass(seed in 0u64..1000, d in 1usize..6) {
        let (store, p) = cell(d, 2, seed, 1.0);
        for m in p.peephole_matrices(&store) {
            for r in 0..d {
                for c in 0..d {
                    if r != c {
                        prop_assert_eq!(m.row(r)[c], 0.0);
                    }
                }
            }
        }
    }
}
