use rand_chacha::ChaCha8Rng;

use super::gate::{gate, gated, GateParams};
use super::{ForwardOutput, Layout, ModelConfig, TaskHead};
use crate::error::{Error, Result};
use crate::lstm::{embed, lstm_step_with_candidate, EmbeddingTable, LstmParams, LstmState, INIT_SCALE};
use crate::param::{ParamId, ParamStore};
use crate::tape::Tape;
use crate::tensor::Shape;

/// One side of a coupled pair.
///
/// The task's own `lstm.u_c` is the self path `U_c^(m→m)`; `cross` is
/// `U_c^(n→m)`. In the gate `g^(i→m) = σ(W_g^(m) x + U_g^(i) h^(i) + b^(m))`
/// the input matrix and bias belong to the receiving task and `gate.u` to
/// the sending one.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledTask {
    pub embedding: EmbeddingTable,
    pub lstm: LstmParams,
    pub cross: ParamId,
    pub gate: GateParams,
}

pub(super) fn build(config: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> (Layout, usize) {
    let (d, e) = (config.hidden_size, config.task_embedding_size);
    let mut side = |m: usize| CoupledTask {
        embedding: EmbeddingTable::init(store, &format!("task{m}.embedding"), config.vocab_size, e, rng),
        lstm: LstmParams::init(store, &format!("task{m}.lstm"), e, d, rng),
        cross: store.add_uniform(format!("task{m}.cross.u_c"), Shape::Matrix(d, d), INIT_SCALE, rng),
        gate: GateParams::init(store, &format!("task{m}.gate"), d, e, d, rng),
    };
    let pair = [side(0), side(1)];
    (Layout::Coupled(pair), d)
}

/// Runs both task LSTMs in lockstep; each candidate mixes both previous
/// hidden states through gates. Returns the head of `task` on `h_T^(task)`.
pub fn forward_coupled(
    tape: &mut Tape,
    store: &ParamStore,
    pair: &[CoupledTask; 2],
    task: usize,
    head: &TaskHead,
    ids: &[usize],
) -> Result<ForwardOutput> {
    if task > 1 {
        return Err(Error::Task { task, count: 2 });
    }
    let xs = [
        embed(tape, store, &pair[0].embedding, ids)?,
        embed(tape, store, &pair[1].embedding, ids)?,
    ];
    let d = pair[0].lstm.hidden_size;
    let mut states = [LstmState::zeros(tape, d), LstmState::zeros(tape, d)];
    let mut hidden = Vec::with_capacity(ids.len());
    for t in 0..ids.len() {
        let mut next = states;
        for m in 0..2 {
            let n = 1 - m;
            let me = &pair[m];
            let x = xs[m][t];
            let (h_m, h_n) = (states[m].h, states[n].h);
            let g_self = gate(tape, store, (me.gate.w, me.gate.u, me.gate.b), x, h_m)?;
            let g_cross = gate(tape, store, (me.gate.w, pair[n].gate.u, me.gate.b), x, h_n)?;
            let self_term = gated(tape, store, g_self, me.lstm.u_c, h_m)?;
            let cross_term = gated(tape, store, g_cross, me.cross, h_n)?;
            let recurrent = tape.add(self_term, cross_term)?;
            next[m] = lstm_step_with_candidate(tape, store, &me.lstm, x, &states[m], recurrent)?.state;
        }
        states = next;
        hidden.push(states[task].h);
    }
    let logits = head.logits(tape, store, states[task].h)?;
    Ok(ForwardOutput {
        logits,
        hidden,
        shared_gates: None,
    })
}
