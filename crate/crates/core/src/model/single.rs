use rand_chacha::ChaCha8Rng;

use super::{ForwardOutput, Layout, ModelConfig, TaskHead};
use crate::error::Result;
use crate::lstm::{embed, encode_sequence, EmbeddingTable, LstmParams};
use crate::param::ParamStore;
use crate::tape::Tape;

/// One independent embedding + LSTM per task.
#[derive(Clone, Debug, PartialEq)]
pub struct SingleTask {
    pub embedding: EmbeddingTable,
    pub lstm: LstmParams,
}

pub(super) fn build(config: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> (Layout, usize) {
    let (d, e) = (config.hidden_size, config.task_embedding_size);
    let tasks = (0..config.task_count())
        .map(|m| SingleTask {
            embedding: EmbeddingTable::init(store, &format!("task{m}.embedding"), config.vocab_size, e, rng),
            lstm: LstmParams::init(store, &format!("task{m}.lstm"), e, d, rng),
        })
        .collect();
    (Layout::Single(tasks), d)
}

/// embed → LSTM → head on `h_T`.
pub fn forward_single(
    tape: &mut Tape,
    store: &ParamStore,
    task: &SingleTask,
    head: &TaskHead,
    ids: &[usize],
) -> Result<ForwardOutput> {
    let xs = embed(tape, store, &task.embedding, ids)?;
    let encoded = encode_sequence(tape, store, &task.lstm, &xs)?;
    let logits = head.logits(tape, store, encoded.last.h)?;
    Ok(ForwardOutput {
        logits,
        hidden: encoded.hidden,
        shared_gates: None,
    })
}
