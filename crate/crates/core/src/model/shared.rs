use rand_chacha::ChaCha8Rng;

use super::gate::{gate, gated, GateParams};
use super::{ForwardOutput, Layout, ModelConfig, TaskHead};
use crate::error::Result;
use crate::lstm::{embed, encode_bidirectional, lstm_step_with_candidate, EmbeddingTable, LstmParams, LstmState, INIT_SCALE};
use crate::param::{ParamId, ParamStore};
use crate::tape::Tape;
use crate::tensor::Shape;

/// The bidirectional layer every task reads from.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedLayer {
    pub embedding: EmbeddingTable,
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl SharedLayer {
    pub fn output_size(&self) -> usize {
        self.fwd.hidden_size + self.bwd.hidden_size
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embedding.param];
        ids.extend(self.fwd.ids());
        ids.extend(self.bwd.ids());
        ids
    }
}

/// Task-specific layer of the shared-layer model.
///
/// `self_gate` is `g^(m)` over the task's own previous state; `shared_gate`
/// is `g^(s→m)` over the shared state at the same position, and
/// `shared_proj` is the `d × 2d` map of that state into the candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedTask {
    pub embedding: EmbeddingTable,
    pub lstm: LstmParams,
    pub self_gate: GateParams,
    pub shared_gate: GateParams,
    pub shared_proj: ParamId,
}

pub(super) fn build(config: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> (Layout, usize) {
    let d = config.hidden_size;
    let (e_task, e_shared) = (config.task_embedding_size, config.shared_embedding_size);
    let layer = SharedLayer {
        embedding: EmbeddingTable::init(store, "shared.embedding", config.vocab_size, e_shared, rng),
        fwd: LstmParams::init(store, "shared.fwd", e_shared, d, rng),
        bwd: LstmParams::init(store, "shared.bwd", e_shared, d, rng),
    };
    let s = layer.output_size();
    let tasks = (0..config.task_count())
        .map(|m| {
            let embedding = EmbeddingTable::init(store, &format!("task{m}.embedding"), config.vocab_size, e_task, rng);
            let lstm = LstmParams::init(store, &format!("task{m}.lstm"), e_task, d, rng);
            let self_gate = GateParams::init(store, &format!("task{m}.gate"), d, e_task, d, rng);
            let shared_gate = if config.tie_gate_input_weights {
                GateParams::init_with_input(store, &format!("task{m}.shared_gate"), self_gate.w, d, s, rng)
            } else {
                GateParams::init(store, &format!("task{m}.shared_gate"), d, e_task, s, rng)
            };
            let shared_proj = store.add_uniform(format!("task{m}.shared_proj"), Shape::Matrix(d, s), INIT_SCALE, rng);
            SharedTask {
                embedding,
                lstm,
                self_gate,
                shared_gate,
                shared_proj,
            }
        })
        .collect();
    (Layout::Shared { layer, tasks }, d)
}

/// Pass one encodes the whole sequence with the shared bidirectional LSTM;
/// pass two runs the task LSTM whose candidate is
/// `tanh(W_c x + g^(m) ⊙ U_c h₋ + g^(s→m) ⊙ P h^(s)_t + b_c)`.
pub fn forward_shared(
    tape: &mut Tape,
    store: &ParamStore,
    layer: &SharedLayer,
    task: &SharedTask,
    head: &TaskHead,
    ids: &[usize],
) -> Result<ForwardOutput> {
    let shared_xs = embed(tape, store, &layer.embedding, ids)?;
    let shared_h = encode_bidirectional(tape, store, &layer.fwd, &layer.bwd, &shared_xs)?;
    let xs = embed(tape, store, &task.embedding, ids)?;
    let mut state = LstmState::zeros(tape, task.lstm.hidden_size);
    let mut hidden = Vec::with_capacity(ids.len());
    let mut gates = Vec::with_capacity(ids.len());
    let sg = &task.self_gate;
    let xg = &task.shared_gate;
    for (&x, &hs) in xs.iter().zip(&shared_h) {
        let g_self = gate(tape, store, (sg.w, sg.u, sg.b), x, state.h)?;
        let g_shared = gate(tape, store, (xg.w, xg.u, xg.b), x, hs)?;
        let own = gated(tape, store, g_self, task.lstm.u_c, state.h)?;
        let from_shared = gated(tape, store, g_shared, task.shared_proj, hs)?;
        let recurrent = tape.add(own, from_shared)?;
        state = lstm_step_with_candidate(tape, store, &task.lstm, x, &state, recurrent)?.state;
        hidden.push(state.h);
        gates.push(g_shared);
    }
    let logits = head.logits(tape, store, state.h)?;
    Ok(ForwardOutput {
        logits,
        hidden,
        shared_gates: Some(gates),
    })
}
