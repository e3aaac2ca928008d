//! Stochastic multi-task training, fine-tuning and evaluation.
//!
//! Every update picks a task uniformly at random, then one of its training
//! examples uniformly at random, and takes an Adagrad step on `λ_m · L_m`
//! for that single example. An epoch is `Σ_m |train_m|` updates.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{kfold_splits, Corpus, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{Architecture, Model};
use crate::param::{Adagrad, ParamStore};
use crate::tape::Tape;
use crate::tensor;

/// A tokenised, id-mapped example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSeq {
    pub ids: Vec<usize>,
    pub label: usize,
}

/// One task's examples, split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TaskData {
    pub train: Vec<LabeledSeq>,
    pub dev: Vec<LabeledSeq>,
    pub test: Vec<LabeledSeq>,
}

impl TaskData {
    pub fn from_corpus(corpus: &Corpus, vocab: &Vocabulary) -> Self {
        let pick = |split| {
            corpus
                .split(split)
                .map(|e| LabeledSeq {
                    ids: vocab.ids(&e.tokens),
                    label: e.label,
                })
                .collect()
        };
        TaskData {
            train: pick(Split::Train),
            dev: pick(Split::Dev),
            test: pick(Split::Test),
        }
    }

    pub fn split(&self, split: Split) -> &[LabeledSeq] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2_weight: f64,
    pub adagrad_epsilon: f64,
    pub max_epochs: usize,
    /// Stop after this many epochs without a dev improvement on any task;
    /// `0` disables early stopping.
    pub early_stop_patience: usize,
    /// Reseeds the sampling generator before training when set.
    pub seed: Option<u64>,
    /// Keep shared parameters fixed while fine-tuning.
    pub freeze_shared: bool,
    /// Also score the test split after every epoch.
    pub eval_test: bool,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            l2_weight: 1e-5,
            adagrad_epsilon: 1e-8,
            max_epochs: 30,
            early_stop_patience: 5,
            seed: None,
            freeze_shared: false,
            eval_test: true,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> Adagrad {
        Adagrad {
            learning_rate: self.learning_rate,
            epsilon: self.adagrad_epsilon,
            l2_weight: self.l2_weight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(self.l2_weight >= 0.0 && self.l2_weight.is_finite()) {
            return Err(Error::Config(format!("l2_weight {} must be non-negative", self.l2_weight)));
        }
        if self.adagrad_epsilon.is_nan() || self.adagrad_epsilon <= 0.0 {
            return Err(Error::Config("adagrad_epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Mean loss and accuracy of one task on one split after one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub task: usize,
    pub split: Split,
    /// Mean unweighted cross-entropy.
    pub loss: f64,
    pub accuracy: f64,
    /// Updates taken so far, all tasks together.
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestEpoch {
    pub epoch: usize,
    pub dev_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<MetricRow>,
    pub update_counts: Vec<usize>,
    pub total_steps: usize,
    pub epochs_run: usize,
    /// Per task; `None` for tasks that were not trained.
    pub best: Vec<Option<BestEpoch>>,
    /// Seconds per epoch. Not part of equality.
    pub wall_clock: Vec<f64>,
}

impl PartialEq for TrainReport {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.update_counts == other.update_counts
            && self.total_steps == other.total_steps
            && self.epochs_run == other.epochs_run
            && self.best == other.best
    }
}

impl TrainReport {
    pub fn row(&self, epoch: usize, task: usize, split: Split) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.epoch == epoch && r.task == task && r.split == split)
    }

    pub fn last_row(&self, task: usize, split: Split) -> Option<&MetricRow> {
        self.rows.iter().rev().find(|r| r.task == task && r.split == split)
    }
}

/// Parameters as they were at a task's best dev epoch.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub epoch: usize,
    pub params: ParamStore,
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub report: TrainReport,
    pub best: Vec<Option<Snapshot>>,
}

impl TrainRun {
    /// Loads the best-dev parameters of `task` into `model`, if any.
    pub fn restore_best(&self, model: &mut Model, task: usize) -> Result<bool> {
        match self.best.get(task).and_then(Option::as_ref) {
            Some(s) => model.restore(&s.params).map(|_| true),
            None => Ok(false),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub gold: usize,
    pub predicted: usize,
    /// Probability of the predicted class.
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<Prediction>,
}

/// Scores every example; per-example work runs under `exec`, the reduction
/// is sequential so both modes give identical numbers.
pub fn evaluate_with(model: &Model, task: usize, examples: &[LabeledSeq], exec: Exec) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty split".into()));
    }
    model.head(task)?;
    let scored = exec.map(examples, |ex| -> Result<(f64, Prediction)> {
        let probs = tensor::softmax(&model.logits(task, &ex.ids)?)?;
        let loss = crate::loss::cross_entropy(&probs, ex.label)?;
        let predicted = tensor::argmax(&probs);
        Ok((
            loss,
            Prediction {
                gold: ex.label,
                predicted,
                probability: probs[predicted],
            },
        ))
    });
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut predictions = Vec::with_capacity(examples.len());
    for s in scored {
        let (l, p) = s?;
        loss += l;
        correct += usize::from(p.gold == p.predicted);
        predictions.push(p);
    }
    let n = examples.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
        predictions,
    })
}

/// Argmax accuracy in `[0, 1]`; ties go to the lowest class index.
pub fn evaluate(model: &Model, task: usize, examples: &[LabeledSeq]) -> Result<f64> {
    Ok(evaluate_with(model, task, examples, Exec::default())?.accuracy)
}

/// Forward, backward and one Adagrad update on a single example; returns the
/// weighted loss.
pub fn train_step(model: &mut Model, task: usize, example: &LabeledSeq, opt: &Adagrad) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = model.loss(&mut tape, task, &example.ids, example.label)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value} on task {task}")));
    }
    tape.backward(loss, &mut model.store)?;
    model.store.adagrad_update(opt)?;
    Ok(value)
}

/// Joint training over all tasks of `model`.
pub fn joint_train(model: &mut Model, tasks: &[TaskData], cfg: &TrainConfig) -> Result<TrainRun> {
    let active: Vec<usize> = (0..model.task_count()).collect();
    train_loop(model, tasks, &active, cfg)
}

/// Continues training on `task` alone. Shared parameters are updated unless
/// `cfg.freeze_shared`; other tasks' private parameters are never touched.
pub fn fine_tune(model: &mut Model, task: usize, tasks: &[TaskData], cfg: &TrainConfig) -> Result<TrainRun> {
    match model.architecture() {
        Architecture::Uniform | Architecture::Shared => {}
        arch => {
            return Err(Error::Unsupported {
                architecture: arch.name(),
                what: "fine-tuning needs a shared layer",
            })
        }
    }
    model.head(task)?;
    if cfg.freeze_shared {
        model.set_shared_trainable(false);
    }
    let run = train_loop(model, tasks, &[task], cfg);
    if cfg.freeze_shared {
        model.set_shared_trainable(true);
    }
    run
}

fn train_loop(model: &mut Model, tasks: &[TaskData], active: &[usize], cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let m_total = model.task_count();
    if tasks.len() != m_total {
        return Err(Error::Config(format!(
            "model has {m_total} tasks but {} datasets were given",
            tasks.len()
        )));
    }
    for &m in active {
        if tasks[m].train.is_empty() {
            return Err(Error::Config(format!("task {m} has no training examples")));
        }
    }
    if let Some(seed) = cfg.seed {
        model.rng = ChaCha8Rng::seed_from_u64(seed);
        model.rng.set_stream(1);
    }
    let opt = cfg.optimizer();
    let steps_per_epoch: usize = active.iter().map(|&m| tasks[m].train.len()).sum();

    let mut report = TrainReport {
        update_counts: vec![0; m_total],
        best: vec![None; m_total],
        ..TrainReport::default()
    };
    let mut best: Vec<Option<Snapshot>> = vec![None; m_total];
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        for _ in 0..steps_per_epoch {
            let task = active[model.rng.gen_range(0..active.len())];
            let data = &tasks[task].train;
            let example = &data[model.rng.gen_range(0..data.len())];
            train_step(model, task, example, &opt)?;
            report.update_counts[task] += 1;
            report.total_steps += 1;
        }

        let mut improved = false;
        let mut any_dev = false;
        for &task in active {
            let mut dev_acc = None;
            let mut test_acc = None;
            for split in Split::ALL {
                let examples = tasks[task].split(split);
                if examples.is_empty() || (split == Split::Test && !cfg.eval_test) {
                    continue;
                }
                let eval = evaluate_with(model, task, examples, cfg.exec)?;
                if !eval.loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "{split} loss is {} for task {task} at epoch {epoch}",
                        eval.loss
                    )));
                }
                match split {
                    Split::Dev => dev_acc = Some(eval.accuracy),
                    Split::Test => test_acc = Some(eval.accuracy),
                    Split::Train => {}
                }
                report.rows.push(MetricRow {
                    epoch,
                    task,
                    split,
                    loss: eval.loss,
                    accuracy: eval.accuracy,
                    steps: report.total_steps,
                });
            }
            // Without a dev split the latest epoch is the best one.
            let better = match (&report.best[task], dev_acc) {
                (None, _) | (_, None) => true,
                (Some(b), Some(acc)) => b.dev_accuracy.is_none_or(|prev| acc > prev),
            };
            any_dev |= dev_acc.is_some();
            if better {
                improved |= dev_acc.is_some();
                report.best[task] = Some(BestEpoch {
                    epoch,
                    dev_accuracy: dev_acc,
                    test_accuracy: test_acc,
                });
                best[task] = Some(Snapshot {
                    epoch,
                    params: model.store.clone(),
                });
            }
        }
        report.epochs_run = epoch;
        report.wall_clock.push(start.elapsed().as_secs_f64());
        // Early stopping needs a dev split to watch.
        stale = if improved || !any_dev { 0 } else { stale + 1 };
        if cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience {
            break;
        }
    }
    Ok(TrainRun { report, best })
}

/// k-fold cross-validation of a freshly built model per fold, for corpora
/// without a dev split. Returns the held-out accuracy of each fold after the
/// full epoch budget.
pub fn cross_validate(
    build: impl Fn(usize) -> Result<Model>,
    examples: &[LabeledSeq],
    k: usize,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let indices: Vec<usize> = (0..examples.len()).collect();
    let cfg = TrainConfig {
        early_stop_patience: 0,
        eval_test: false,
        ..cfg.clone()
    };
    kfold_splits(&indices, k, seed)?
        .into_iter()
        .enumerate()
        .map(|(fold, (train, test))| {
            let mut model = build(fold)?;
            if model.task_count() != 1 {
                return Err(Error::Config("cross-validation trains one task at a time".into()));
            }
            let data = TaskData {
                train: train.iter().map(|&i| examples[i].clone()).collect(),
                ..TaskData::default()
            };
            joint_train(&mut model, std::slice::from_ref(&data), &cfg)?;
            let held_out: Vec<LabeledSeq> = test.iter().map(|&i| examples[i].clone()).collect();
            evaluate_with(&model, 0, &held_out, cfg.exec).map(|e| e.accuracy)
        })
        .collect()
}
