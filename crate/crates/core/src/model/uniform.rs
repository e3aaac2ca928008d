use rand_chacha::ChaCha8Rng;

use super::{ForwardOutput, Layout, ModelConfig, TaskHead};
use crate::error::Result;
use crate::lstm::{embed, encode_sequence, EmbeddingTable, LstmParams};
use crate::param::ParamStore;
use crate::tape::Tape;

pub(super) fn build(config: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> (Layout, usize) {
    let d = config.hidden_size;
    let shared_embedding = EmbeddingTable::init(
        store,
        "shared.embedding",
        config.vocab_size,
        config.shared_embedding_size,
        rng,
    );
    let task_embeddings = (0..config.task_count())
        .map(|m| {
            EmbeddingTable::init(
                store,
                &format!("task{m}.embedding"),
                config.vocab_size,
                config.task_embedding_size,
                rng,
            )
        })
        .collect();
    let input = config.task_embedding_size + config.shared_embedding_size;
    let lstm = LstmParams::init(store, "shared.lstm", input, d, rng);
    (
        Layout::Uniform {
            shared_embedding,
            task_embeddings,
            lstm,
        },
        d,
    )
}

/// Every task feeds `task embedding ⊕ shared embedding` through one shared
/// LSTM; the task's head reads `h_T`.
pub fn forward_uniform(
    tape: &mut Tape,
    store: &ParamStore,
    shared_embedding: &EmbeddingTable,
    task_embedding: &EmbeddingTable,
    lstm: &LstmParams,
    head: &TaskHead,
    ids: &[usize],
) -> Result<ForwardOutput> {
    let own = embed(tape, store, task_embedding, ids)?;
    let common = embed(tape, store, shared_embedding, ids)?;
    let xs = own
        .into_iter()
        .zip(common)
        .map(|(a, b)| tape.concat(a, b))
        .collect::<Result<Vec<_>>>()?;
    let encoded = encode_sequence(tape, store, lstm, &xs)?;
    let logits = head.logits(tape, store, encoded.last.h)?;
    Ok(ForwardOutput {
        logits,
        hidden: encoded.hidden,
        shared_gates: None,
    })
}
