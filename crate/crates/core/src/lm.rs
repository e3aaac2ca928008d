//! Language-model pre-training of the shared bidirectional layer.
//!
//! The forward cell predicts token `t+1` from the prefix ending at `t`, the
//! backward cell predicts token `t−1` from the suffix starting at `t`. Both
//! use temporary softmax layers over the vocabulary, which are dropped when
//! training ends; the shared embedding and both cells keep their trained
//! values.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::lstm::{embed, encode_sequence, INIT_SCALE};
use crate::model::{Model, SharedLayer};
use crate::param::{Adagrad, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Shape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub epochs: usize,
    /// Fraction of sentences held out for perplexity.
    pub heldout_fraction: f64,
    pub seed: u64,
    pub learning_rate: f64,
    pub l2_weight: f64,
    pub adagrad_epsilon: f64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            epochs: 3,
            heldout_fraction: 0.1,
            seed: 0,
            learning_rate: 0.1,
            l2_weight: 1e-5,
            adagrad_epsilon: 1e-8,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmEpoch {
    pub epoch: usize,
    /// Mean per-token negative log-likelihood on the training sentences.
    pub train_nll: f64,
    pub heldout_perplexity: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LmReport {
    pub initial_heldout_perplexity: f64,
    pub epochs: Vec<LmEpoch>,
    pub train_sentences: usize,
    pub heldout_sentences: usize,
}

struct LmHeads {
    fwd_w: ParamId,
    fwd_b: ParamId,
    bwd_w: ParamId,
    bwd_b: ParamId,
}

impl LmHeads {
    fn add(store: &mut ParamStore, vocab: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        LmHeads {
            fwd_w: store.add_uniform("lm.fwd.w", Shape::Matrix(vocab, hidden), INIT_SCALE, rng),
            fwd_b: store.add_filled("lm.fwd.b", Shape::Vector(vocab), 0.0),
            bwd_w: store.add_uniform("lm.bwd.w", Shape::Matrix(vocab, hidden), INIT_SCALE, rng),
            bwd_b: store.add_filled("lm.bwd.b", Shape::Vector(vocab), 0.0),
        }
    }
}

/// Builds the summed next/previous-token loss of one sentence; returns the
/// loss node and how many predictions it covers.
fn sentence_loss(
    tape: &mut Tape,
    store: &ParamStore,
    layer: &SharedLayer,
    heads: &LmHeads,
    ids: &[usize],
) -> Result<(Var, usize)> {
    let xs = embed(tape, store, &layer.embedding, ids)?;
    let fwd = encode_sequence(tape, store, &layer.fwd, &xs)?.hidden;
    let rev: Vec<Var> = xs.iter().rev().copied().collect();
    let mut bwd = encode_sequence(tape, store, &layer.bwd, &rev)?.hidden;
    bwd.reverse();

    let mut terms = Vec::with_capacity(2 * ids.len());
    let mut predict = |tape: &mut Tape, (w, b): (ParamId, ParamId), h: Var, target: usize| -> Result<()> {
        let w = tape.param(store, w);
        let b = tape.param(store, b);
        let wh = tape.matmul(w, h)?;
        let z = tape.add(wh, b)?;
        terms.push(tape.softmax_cross_entropy(z, target)?);
        Ok(())
    };
    for t in 0..ids.len() - 1 {
        predict(tape, (heads.fwd_w, heads.fwd_b), fwd[t], ids[t + 1])?;
    }
    for t in 1..ids.len() {
        predict(tape, (heads.bwd_w, heads.bwd_b), bwd[t], ids[t - 1])?;
    }
    let count = terms.len();
    Ok((tape.sum_scalars(&terms)?, count))
}

fn perplexity(store: &ParamStore, layer: &SharedLayer, heads: &LmHeads, sentences: &[Vec<usize>], exec: Exec) -> Result<f64> {
    let per = exec.map(sentences, |ids| -> Result<(f64, usize)> {
        let mut tape = Tape::new();
        let (loss, n) = sentence_loss(&mut tape, store, layer, heads, ids)?;
        Ok((tape.scalar(loss), n))
    });
    let (mut total, mut count) = (0.0, 0usize);
    for r in per {
        let (l, n) = r?;
        total += l;
        count += n;
    }
    Ok((total / count as f64).exp())
}

/// Trains the shared layer of a shared-layer model as a bidirectional
/// language model over `sentences` (token ids).
pub fn pretrain_lm(model: &mut Model, sentences: &[Vec<usize>], cfg: &LmConfig) -> Result<LmReport> {
    let layer = model
        .shared_layer()
        .cloned()
        .ok_or_else(|| Error::Config(format!("{} models have no shared layer to pretrain", model.architecture())))?;
    let usable: Vec<Vec<usize>> = sentences.iter().filter(|s| s.len() >= 2).cloned().collect();
    if usable.len() < 2 {
        return Err(Error::Config(
            "language-model corpus needs at least two sentences of two or more tokens".into(),
        ));
    }
    if !(0.0 < cfg.heldout_fraction && cfg.heldout_fraction < 1.0) {
        return Err(Error::Config(format!(
            "heldout_fraction {} must be in (0, 1)",
            cfg.heldout_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    order.shuffle(&mut rng);
    let n_held = ((usable.len() as f64 * cfg.heldout_fraction).round() as usize).clamp(1, usable.len() - 1);
    let heldout: Vec<Vec<usize>> = order[..n_held].iter().map(|&i| usable[i].clone()).collect();
    let mut train: Vec<Vec<usize>> = order[n_held..].iter().map(|&i| usable[i].clone()).collect();

    let opt = Adagrad {
        learning_rate: cfg.learning_rate,
        epsilon: cfg.adagrad_epsilon,
        l2_weight: cfg.l2_weight,
    };
    let base_len = model.store.len();
    let heads = LmHeads::add(&mut model.store, layer.embedding.vocab_size, layer.fwd.hidden_size, &mut rng);
    let result = (|| {
        let mut report = LmReport {
            initial_heldout_perplexity: perplexity(&model.store, &layer, &heads, &heldout, cfg.exec)?,
            train_sentences: train.len(),
            heldout_sentences: heldout.len(),
            ..LmReport::default()
        };
        for epoch in 1..=cfg.epochs {
            train.shuffle(&mut rng);
            let (mut total, mut count) = (0.0, 0usize);
            for ids in &train {
                let mut tape = Tape::new();
                let (sum, n) = sentence_loss(&mut tape, &model.store, &layer, &heads, ids)?;
                let loss = tape.scale(sum, 1.0 / n as f64);
                let value = tape.scalar(sum);
                if !value.is_finite() {
                    return Err(Error::Numeric(format!("language-model loss is {value}")));
                }
                tape.backward(loss, &mut model.store)?;
                model.store.adagrad_update(&opt)?;
                total += value;
                count += n;
            }
            report.epochs.push(LmEpoch {
                epoch,
                train_nll: total / count as f64,
                heldout_perplexity: perplexity(&model.store, &layer, &heads, &heldout, cfg.exec)?,
            });
        }
        Ok(report)
    })();
    model.store.zero_grad();
    model.store.truncate(base_len);
    result
}
