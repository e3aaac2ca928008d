//! Peephole LSTM cell, embedding lookup and sequence encoders.
//!
//! One step computes
//!
//! ```text
//! i  = σ(W_i x + U_i h₋ + v_i ⊙ c₋ + b_i)
//! f  = σ(W_f x + U_f h₋ + v_f ⊙ c₋ + b_f)
//! c̃  = tanh(W_c x + U_c h₋ + b_c)
//! c  = f ⊙ c₋ + i ⊙ c̃
//! o  = σ(W_o x + U_o h₋ + v_o ⊙ c + b_o)
//! h  = o ⊙ tanh(c)
//! ```
//!
//! The peephole weights are diagonal and stored as vectors. The output gate
//! looks at the updated cell `c`, so `c` is computed before `o`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore, Parameter};
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Range of the uniform weight initialisation.
pub const INIT_SCALE: f64 = 0.1;
/// Initial forget-gate bias.
pub const FORGET_BIAS: f64 = 1.0;

/// Parameter handles of one LSTM cell.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_i: ParamId,
    pub w_f: ParamId,
    pub w_o: ParamId,
    pub w_c: ParamId,
    pub u_i: ParamId,
    pub u_f: ParamId,
    pub u_o: ParamId,
    pub u_c: ParamId,
    pub v_i: ParamId,
    pub v_f: ParamId,
    pub v_o: ParamId,
    pub b_i: ParamId,
    pub b_f: ParamId,
    pub b_o: ParamId,
    pub b_c: ParamId,
}

impl LstmParams {
    /// Registers a fresh cell under `prefix` (e.g. `task0.lstm`).
    pub fn init(store: &mut ParamStore, prefix: &str, input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        let (d, e) = (hidden_size, input_size);
        let mut w = |name: &str| store.add_uniform(format!("{prefix}.{name}"), Shape::Matrix(d, e), INIT_SCALE, rng);
        let (w_i, w_f, w_o, w_c) = (w("w_i"), w("w_f"), w("w_o"), w("w_c"));
        let mut u = |name: &str| store.add_uniform(format!("{prefix}.{name}"), Shape::Matrix(d, d), INIT_SCALE, rng);
        let (u_i, u_f, u_o, u_c) = (u("u_i"), u("u_f"), u("u_o"), u("u_c"));
        let mut v = |name: &str| store.add_uniform(format!("{prefix}.{name}"), Shape::Vector(d), INIT_SCALE, rng);
        let (v_i, v_f, v_o) = (v("v_i"), v("v_f"), v("v_o"));
        let mut b = |name: &str, value| store.add_filled(format!("{prefix}.{name}"), Shape::Vector(d), value);
        LstmParams {
            input_size,
            hidden_size,
            w_i,
            w_f,
            w_o,
            w_c,
            u_i,
            u_f,
            u_o,
            u_c,
            v_i,
            v_f,
            v_o,
            b_i: b("b_i", 0.0),
            b_f: b("b_f", FORGET_BIAS),
            b_o: b("b_o", 0.0),
            b_c: b("b_c", 0.0),
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![
            self.w_i, self.w_f, self.w_o, self.w_c, self.u_i, self.u_f, self.u_o, self.u_c, self.v_i, self.v_f,
            self.v_o, self.b_i, self.b_f, self.b_o, self.b_c,
        ]
    }

    /// The peephole weights as explicit diagonal matrices.
    pub fn peephole_matrices(&self, store: &ParamStore) -> [Tensor; 3] {
        [self.v_i, self.v_f, self.v_o].map(|id| {
            let v = store.get(id).value.data();
            let n = v.len();
            let mut m = Tensor::zeros(Shape::Matrix(n, n));
            for (k, &x) in v.iter().enumerate() {
                m.data_mut()[k * n + k] = x;
            }
            m
        })
    }
}

/// Hidden state and memory cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape, hidden_size: usize) -> Self {
        LstmState {
            h: tape.constant(Tensor::zeros(Shape::Vector(hidden_size))),
            c: tape.constant(Tensor::zeros(Shape::Vector(hidden_size))),
        }
    }
}

/// Everything one step produced, gates included.
#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub state: LstmState,
    pub input_gate: Var,
    pub forget_gate: Var,
    pub output_gate: Var,
    pub candidate: Var,
}

/// `W x + U h + b`, optionally with a diagonal peephole term `v ⊙ c`.
fn affine(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    h: Var,
    (w, u, b): (ParamId, ParamId, ParamId),
    peephole: Option<(ParamId, Var)>,
) -> Result<Var> {
    let w = tape.param(store, w);
    let u = tape.param(store, u);
    let b = tape.param(store, b);
    let wx = tape.matmul(w, x)?;
    let uh = tape.matmul(u, h)?;
    let mut acc = tape.add(wx, uh)?;
    if let Some((v, c)) = peephole {
        let v = tape.param(store, v);
        let vc = tape.mul(v, c)?;
        acc = tape.add(acc, vc)?;
    }
    tape.add(acc, b)
}

fn check_input(tape: &Tape, p: &LstmParams, x: Var, prev: &LstmState) -> Result<()> {
    let want = Shape::Vector(p.input_size);
    if tape.shape(x) != want {
        return Err(Error::Dimension {
            op: "lstm_step input",
            left: tape.shape(x),
            right: want,
        });
    }
    let hidden = Shape::Vector(p.hidden_size);
    for v in [prev.h, prev.c] {
        if tape.shape(v) != hidden {
            return Err(Error::Dimension {
                op: "lstm_step state",
                left: tape.shape(v),
                right: hidden,
            });
        }
    }
    Ok(())
}

/// A step whose candidate recurrence is supplied by the caller.
///
/// `recurrent` replaces the `U_c h₋` term of the candidate pre-activation;
/// the coupled and shared-layer architectures pass gated sums here. Gates
/// `i`, `f`, `o` are the standard ones.
pub fn lstm_step_with_candidate(
    tape: &mut Tape,
    store: &ParamStore,
    p: &LstmParams,
    x: Var,
    prev: &LstmState,
    recurrent: Var,
) -> Result<StepOutput> {
    check_input(tape, p, x, prev)?;
    let i = affine(tape, store, x, prev.h, (p.w_i, p.u_i, p.b_i), Some((p.v_i, prev.c)))?;
    let i = tape.sigmoid(i);
    let f = affine(tape, store, x, prev.h, (p.w_f, p.u_f, p.b_f), Some((p.v_f, prev.c)))?;
    let f = tape.sigmoid(f);

    let w_c = tape.param(store, p.w_c);
    let b_c = tape.param(store, p.b_c);
    let wx = tape.matmul(w_c, x)?;
    let pre = tape.add(wx, recurrent)?;
    let pre = tape.add(pre, b_c)?;
    let candidate = tape.tanh(pre);

    let keep = tape.mul(f, prev.c)?;
    let write = tape.mul(i, candidate)?;
    let c = tape.add(keep, write)?;

    let o = affine(tape, store, x, prev.h, (p.w_o, p.u_o, p.b_o), Some((p.v_o, c)))?;
    let o = tape.sigmoid(o);
    let squashed = tape.tanh(c);
    let h = tape.mul(o, squashed)?;
    Ok(StepOutput {
        state: LstmState { h, c },
        input_gate: i,
        forget_gate: f,
        output_gate: o,
        candidate,
    })
}

pub fn lstm_step_detailed(tape: &mut Tape, store: &ParamStore, p: &LstmParams, x: Var, prev: &LstmState) -> Result<StepOutput> {
    check_input(tape, p, x, prev)?;
    let u_c = tape.param(store, p.u_c);
    let recurrent = tape.matmul(u_c, prev.h)?;
    lstm_step_with_candidate(tape, store, p, x, prev, recurrent)
}

pub fn lstm_step(tape: &mut Tape, store: &ParamStore, p: &LstmParams, x: Var, prev: &LstmState) -> Result<LstmState> {
    Ok(lstm_step_detailed(tape, store, p, x, prev)?.state)
}

/// Result of running a cell over a sequence.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub last: LstmState,
    /// `h_t` for every position, in input order.
    pub hidden: Vec<Var>,
}

/// Runs the cell over `xs` from the zero state.
pub fn encode_sequence(tape: &mut Tape, store: &ParamStore, p: &LstmParams, xs: &[Var]) -> Result<Encoded> {
    if xs.is_empty() {
        return Err(Error::Input("cannot encode an empty sequence".into()));
    }
    let mut state = LstmState::zeros(tape, p.hidden_size);
    let mut hidden = Vec::with_capacity(xs.len());
    for &x in xs {
        state = lstm_step(tape, store, p, x, &state)?;
        hidden.push(state.h);
    }
    Ok(Encoded { last: state, hidden })
}

/// Position `t` holds `forward_h_t ⊕ backward_h_t`, where the backward cell
/// has read `x_T … x_t`.
pub fn encode_bidirectional(
    tape: &mut Tape,
    store: &ParamStore,
    fwd: &LstmParams,
    bwd: &LstmParams,
    xs: &[Var],
) -> Result<Vec<Var>> {
    if fwd.hidden_size != bwd.hidden_size {
        return Err(Error::Dimension {
            op: "encode_bidirectional",
            left: Shape::Vector(fwd.hidden_size),
            right: Shape::Vector(bwd.hidden_size),
        });
    }
    let forward = encode_sequence(tape, store, fwd, xs)?;
    let reversed: Vec<Var> = xs.iter().rev().copied().collect();
    let mut backward = encode_sequence(tape, store, bwd, &reversed)?.hidden;
    backward.reverse();
    forward
        .hidden
        .iter()
        .zip(&backward)
        .map(|(&f, &b)| tape.concat(f, b))
        .collect()
}

/// Handle to a `vocab × dim` lookup table living in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingTable {
    pub param: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    /// Uniform init with the reserved row 0 zeroed. Updates are row-sparse.
    pub fn init(store: &mut ParamStore, name: &str, vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let mut data: Vec<f64> = (0..vocab_size * dim)
            .map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE))
            .collect();
        let n = dim.min(data.len());
    data[..n].fill(0.0);
        let mut p = Parameter::new(
            name,
            Tensor::matrix(vocab_size, dim, data).expect("shape/data agree"),
        );
        p.sparse_rows = true;
        EmbeddingTable {
            param: store.add(p),
            vocab_size,
            dim,
        }
    }

    /// Replaces the table contents, e.g. with pretrained vectors.
    pub fn load(&self, store: &mut ParamStore, matrix: &Tensor) -> Result<()> {
        let want = Shape::Matrix(self.vocab_size, self.dim);
        if matrix.shape() != want {
            return Err(Error::Config(format!(
                "embedding matrix is {} but table {} expects {want}",
                matrix.shape(),
                store.get(self.param).name
            )));
        }
        store.get_mut(self.param).value = matrix.clone();
        Ok(())
    }

    pub fn set_trainable(&self, store: &mut ParamStore, trainable: bool) {
        store.get_mut(self.param).trainable = trainable;
    }
}

/// Looks up one row per token id.
pub fn embed(tape: &mut Tape, store: &ParamStore, table: &EmbeddingTable, ids: &[usize]) -> Result<Vec<Var>> {
    ids.iter().map(|&id| tape.row(store, table.param, id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cell(d: usize, e: usize, seed: u64) -> (ParamStore, LstmParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = LstmParams::init(&mut store, "lstm", e, d, &mut rng);
        (store, p)
    }

    fn zero_all(store: &mut ParamStore) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.get_mut(id).value.fill(0.0);
        }
    }

    #[test]
    fn zero_parameters_give_half_gates_and_zero_state() {
        let (mut store, p) = cell(3, 2, 1);
        zero_all(&mut store);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.7, -1.3]));
        let prev = LstmState::zeros(&mut tape, 3);
        let out = lstm_step_detailed(&mut tape, &store, &p, x, &prev).unwrap();
        for g in [out.input_gate, out.forget_gate, out.output_gate] {
            assert!(tape.value(g).data().iter().all(|&v| v == 0.5));
        }
        assert!(tape.value(out.candidate).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(out.state.c).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(out.state.h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_gates_preserve_memory() {
        let (mut store, p) = cell(2, 1, 2);
        store.get_mut(p.b_f).value.fill(50.0);
        store.get_mut(p.b_i).value.fill(-50.0);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.4]));
        let prev = LstmState {
            h: tape.constant(Tensor::vector(vec![0.1, -0.2])),
            c: tape.constant(Tensor::vector(vec![0.8, -0.6])),
        };
        let next = lstm_step(&mut tape, &store, &p, x, &prev).unwrap();
        for (a, b) in tape.value(next.c).data().iter().zip([0.8, -0.6]) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn wrong_input_width_is_a_dimension_error() {
        let (store, p) = cell(2, 3, 3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let prev = LstmState::zeros(&mut tape, 2);
        assert!(matches!(
            lstm_step(&mut tape, &store, &p, x, &prev),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let (store, p) = cell(2, 1, 4);
        let mut tape = Tape::new();
        assert!(matches!(encode_sequence(&mut tape, &store, &p, &[]), Err(Error::Input(_))));
    }

    #[test]
    fn embedding_row_zero_is_zero_and_out_of_range_fails() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let table = EmbeddingTable::init(&mut store, "emb", 4, 3, &mut rng);
        let mut tape = Tape::new();
        let xs = embed(&mut tape, &store, &table, &[0, 2]).unwrap();
        assert_eq!(tape.value(xs[0]).data(), &[0.0; 3]);
        assert_eq!(tape.value(xs[1]).data(), store.get(table.param).value.row(2));
        assert!(matches!(
            embed(&mut tape, &store, &table, &[4]),
            Err(Error::Index { index: 4, len: 4 })
        ));
    }

    #[test]
    fn repeated_token_accumulates_gradient() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let table = EmbeddingTable::init(&mut store, "emb", 3, 2, &mut rng);
        let mut tape = Tape::new();
        let xs = embed(&mut tape, &store, &table, &[1, 1, 1, 2]).unwrap();
        let ones = tape.constant(Tensor::vector(vec![1.0, 1.0]));
        let mut terms = Vec::new();
        for x in xs {
            let prod = tape.mul(x, ones).unwrap();
            let s = tape.constant(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap());
            terms.push(tape.matmul(s, prod).unwrap());
        }
        let loss = tape.sum_scalars(&terms).unwrap();
        tape.backward(loss, &mut store).unwrap();
        let g = &store.get(table.param).gradient;
        assert_eq!(g.row(1), &[3.0, 3.0]);
        assert_eq!(g.row(2), &[1.0, 1.0]);
        assert_eq!(g.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn peephole_matrices_are_diagonal() {
        let (store, p) = cell(3, 2, 7);
        for m in p.peephole_matrices(&store) {
            for r in 0..3 {
                for c in 0..3 {
                    if r != c {
                        assert_eq!(m.row(r)[c], 0.0);
                    }
                }
            }
        }
    }
}
