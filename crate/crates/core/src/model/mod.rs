//! The single-task baseline and the three multi-task architectures.
//!
//! | architecture | shared parameters | task-private parameters |
//! |---|---|---|
//! | single   | none | embedding, LSTM, head |
//! | uniform  | shared embedding, LSTM | task embedding, head |
//! | coupled  | the pair's LSTMs, gates and embeddings read each other | head |
//! | shared   | shared embedding, bidirectional LSTM | embedding, LSTM, gates, head |
//!
//! Parameter names start with `shared.` or `task{m}.`, which the checkpoint
//! format and the parameter-surgery tests rely on.

mod coupled;
mod gate;
mod shared;
mod single;
mod trace;
mod uniform;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{EmbeddingTable, LstmParams, INIT_SCALE};
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{self, Shape};

pub use coupled::CoupledTask;
pub use gate::GateParams;
pub use shared::{SharedLayer, SharedTask};
pub use single::SingleTask;
pub use trace::GateTrace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Single,
    Uniform,
    Coupled,
    Shared,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Single => "single",
            Architecture::Uniform => "uniform",
            Architecture::Coupled => "coupled",
            Architecture::Shared => "shared",
        }
    }

    pub const ALL: [Architecture; 4] = [
        Architecture::Single,
        Architecture::Uniform,
        Architecture::Coupled,
        Architecture::Shared,
    ];
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture {s:?}")))
    }
}

/// Output side of one classification task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub classes: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_lambda() -> f64 {
    1.0
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, classes: usize) -> Self {
        TaskSpec {
            name: name.into(),
            classes,
            lambda: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub tasks: Vec<TaskSpec>,
    pub vocab_size: usize,
    #[serde(default = "default_hidden")]
    pub hidden_size: usize,
    #[serde(default = "default_embedding")]
    pub task_embedding_size: usize,
    #[serde(default = "default_embedding")]
    pub shared_embedding_size: usize,
    /// Use one input matrix for both gates of the shared-layer model.
    #[serde(default)]
    pub tie_gate_input_weights: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden() -> usize {
    50
}

fn default_embedding() -> usize {
    64
}

impl ModelConfig {
    pub fn new(architecture: Architecture, tasks: Vec<TaskSpec>, vocab_size: usize) -> Self {
        ModelConfig {
            architecture,
            tasks,
            vocab_size,
            hidden_size: default_hidden(),
            task_embedding_size: default_embedding(),
            shared_embedding_size: default_embedding(),
            tie_gate_input_weights: false,
            seed: 0,
        }
    }

    pub fn with_sizes(mut self, hidden: usize, task_embedding: usize, shared_embedding: usize) -> Self {
        self.hidden_size = hidden;
        self.task_embedding_size = task_embedding;
        self.shared_embedding_size = shared_embedding;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.tasks.len();
        match self.architecture {
            Architecture::Single if m < 1 => {
                return Err(Error::Config("the single-task model needs at least one task".into()))
            }
            Architecture::Coupled if m != 2 => {
                return Err(Error::Config(format!(
                    "the coupled architecture joins exactly two tasks, got {m}"
                )))
            }
            Architecture::Uniform | Architecture::Shared if m < 2 => {
                return Err(Error::Config(format!(
                    "the {} architecture needs at least two tasks, got {m}",
                    self.architecture
                )))
            }
            _ => {}
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        for (name, v) in [
            ("hidden_size", self.hidden_size),
            ("task_embedding_size", self.task_embedding_size),
            ("shared_embedding_size", self.shared_embedding_size),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for t in &self.tasks {
            if t.classes == 0 {
                return Err(Error::Config(format!("task {} has no classes", t.name)));
            }
            if !(t.lambda > 0.0 && t.lambda.is_finite()) {
                return Err(Error::Config(format!(
                    "task {} has loss weight {}; it must be positive",
                    t.name, t.lambda
                )));
            }
        }
        Ok(())
    }
}

/// Softmax output layer of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskHead {
    pub weight: ParamId,
    pub bias: ParamId,
    pub classes: usize,
    pub lambda: f64,
}

impl TaskHead {
    fn init(store: &mut ParamStore, task: usize, spec: &TaskSpec, input: usize, rng: &mut ChaCha8Rng) -> Self {
        TaskHead {
            weight: store.add_uniform(
                format!("task{task}.head.w"),
                Shape::Matrix(spec.classes, input),
                INIT_SCALE,
                rng,
            ),
            bias: store.add_filled(format!("task{task}.head.b"), Shape::Vector(spec.classes), 0.0),
            classes: spec.classes,
            lambda: spec.lambda,
        }
    }

    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let wh = tape.matmul(w, h)?;
        tape.add(wh, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layout {
    Single(Vec<SingleTask>),
    Uniform {
        shared_embedding: EmbeddingTable,
        task_embeddings: Vec<EmbeddingTable>,
        lstm: LstmParams,
    },
    Coupled([CoupledTask; 2]),
    Shared {
        layer: SharedLayer,
        tasks: Vec<SharedTask>,
    },
}

/// What a forward pass leaves on the tape.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    /// The task representation `h_t` at every position.
    pub hidden: Vec<Var>,
    /// Shared-to-task gate `g^(s→m)` per position (shared-layer model only).
    pub shared_gates: Option<Vec<Var>>,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    pub store: ParamStore,
    layout: Layout,
    heads: Vec<TaskHead>,
    /// Training-time randomness (task and example sampling).
    pub rng: ChaCha8Rng,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (layout, head_input) = match config.architecture {
            Architecture::Single => single::build(&config, &mut store, &mut rng),
            Architecture::Uniform => uniform::build(&config, &mut store, &mut rng),
            Architecture::Coupled => coupled::build(&config, &mut store, &mut rng),
            Architecture::Shared => shared::build(&config, &mut store, &mut rng),
        };
        let heads = config
            .tasks
            .iter()
            .enumerate()
            .map(|(m, spec)| TaskHead::init(&mut store, m, spec, head_input, &mut rng))
            .collect();
        let mut train_rng = ChaCha8Rng::seed_from_u64(config.seed);
        train_rng.set_stream(1);
        Ok(Model {
            config,
            store,
            layout,
            heads,
            rng: train_rng,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn task_count(&self) -> usize {
        self.heads.len()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn head(&self, task: usize) -> Result<&TaskHead> {
        self.heads.get(task).ok_or(Error::Task {
            task,
            count: self.heads.len(),
        })
    }

    pub fn heads(&self) -> &[TaskHead] {
        &self.heads
    }

    pub fn param(&self, name: &str) -> Option<ParamId> {
        self.store.id(name)
    }

    fn check_task(&self, task: usize) -> Result<()> {
        self.head(task).map(|_| ())
    }

    /// Builds the forward graph for `task` on `tape`.
    pub fn forward(&self, tape: &mut Tape, task: usize, ids: &[usize]) -> Result<ForwardOutput> {
        self.forward_in(tape, &self.store, task, ids)
    }

    /// As [`Model::forward`], reading parameters from `store`, which must be
    /// a copy of this model's store (possibly perturbed).
    pub fn forward_in(&self, tape: &mut Tape, store: &ParamStore, task: usize, ids: &[usize]) -> Result<ForwardOutput> {
        self.check_task(task)?;
        if ids.is_empty() {
            return Err(Error::Input("cannot classify an empty sequence".into()));
        }
        let head = &self.heads[task];
        match &self.layout {
            Layout::Single(tasks) => single::forward_single(tape, store, &tasks[task], head, ids),
            Layout::Uniform {
                shared_embedding,
                task_embeddings,
                lstm,
            } => uniform::forward_uniform(
                tape,
                store,
                shared_embedding,
                &task_embeddings[task],
                lstm,
                head,
                ids,
            ),
            Layout::Coupled(pair) => coupled::forward_coupled(tape, store, pair, task, head, ids),
            Layout::Shared { layer, tasks } => {
                shared::forward_shared(tape, store, layer, &tasks[task], head, ids)
            }
        }
    }

    /// `λ_m · CE(softmax(logits), label)` on a fresh graph.
    pub fn loss(&self, tape: &mut Tape, task: usize, ids: &[usize], label: usize) -> Result<Var> {
        self.loss_in(tape, &self.store, task, ids, label)
    }

    pub fn loss_in(&self, tape: &mut Tape, store: &ParamStore, task: usize, ids: &[usize], label: usize) -> Result<Var> {
        let out = self.forward_in(tape, store, task, ids)?;
        let ce = tape.softmax_cross_entropy(out.logits, label)?;
        Ok(tape.scale(ce, self.heads[task].lambda))
    }

    pub fn logits(&self, task: usize, ids: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, task, ids)?;
        Ok(tape.value(out.logits).data().to_vec())
    }

    pub fn probabilities(&self, task: usize, ids: &[usize]) -> Result<Vec<f64>> {
        tensor::softmax(&self.logits(task, ids)?)
    }

    pub fn predict(&self, task: usize, ids: &[usize]) -> Result<usize> {
        Ok(tensor::argmax(&self.logits(task, ids)?))
    }

    /// Class distribution after every prefix: the head applied to each `h_t`.
    pub fn predict_per_timestep(&self, task: usize, ids: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, task, ids)?;
        let head = &self.heads[task];
        out.hidden
            .iter()
            .map(|&h| {
                let z = head.logits(&mut tape, &self.store, h)?;
                tensor::softmax(tape.value(z).data())
            })
            .collect()
    }

    /// Final distribution plus, for the shared-layer model, the trace of the
    /// shared-to-task gate.
    pub fn trace(&self, task: usize, tokens: &[String], ids: &[usize]) -> Result<(Vec<f64>, Option<GateTrace>)> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, task, ids)?;
        let probs = tensor::softmax(tape.value(out.logits).data())?;
        let trace = out.shared_gates.map(|gates| {
            let activations = gates.iter().map(|&g| tape.value(g).data().to_vec()).collect();
            GateTrace::new(task, tokens.to_vec(), activations)
        });
        Ok((probs, trace))
    }

    /// Parameters that only `task`'s loss can reach.
    pub fn private_params(&self, task: usize) -> Vec<ParamId> {
        let prefix = format!("task{task}.");
        let head_prefix = format!("task{task}.head.");
        let keep: &dyn Fn(&str) -> bool = match self.config.architecture {
            Architecture::Coupled => &|n: &str| n.starts_with(&head_prefix),
            _ => &|n: &str| n.starts_with(&prefix),
        };
        self.store
            .iter()
            .filter(|(_, p)| keep(&p.name))
            .map(|(id, _)| id)
            .collect()
    }

    /// Parameters fed by every task's loss.
    pub fn shared_params(&self) -> Vec<ParamId> {
        self.store
            .iter()
            .filter(|(_, p)| p.name.starts_with("shared."))
            .map(|(id, _)| id)
            .collect()
    }

    pub fn set_shared_trainable(&mut self, trainable: bool) {
        for id in self.shared_params() {
            self.store.get_mut(id).trainable = trainable;
        }
    }

    /// Every embedding table, for loading pretrained vectors.
    pub fn embedding_tables(&self) -> Vec<EmbeddingTable> {
        match &self.layout {
            Layout::Single(tasks) => tasks.iter().map(|t| t.embedding).collect(),
            Layout::Uniform {
                shared_embedding,
                task_embeddings,
                ..
            } => std::iter::once(*shared_embedding)
                .chain(task_embeddings.iter().copied())
                .collect(),
            Layout::Coupled(pair) => pair.iter().map(|t| t.embedding).collect(),
            Layout::Shared { layer, tasks } => std::iter::once(layer.embedding)
                .chain(tasks.iter().map(|t| t.embedding))
                .collect(),
        }
    }

    pub fn shared_layer(&self) -> Option<&SharedLayer> {
        match &self.layout {
            Layout::Shared { layer, .. } => Some(layer),
            _ => None,
        }
    }

    /// Copies parameter values from a snapshot of this same model.
    pub fn restore(&mut self, snapshot: &ParamStore) -> Result<()> {
        if snapshot.len() != self.store.len() {
            return Err(Error::Contract(format!(
                "snapshot has {} parameters, model has {}",
                snapshot.len(),
                self.store.len()
            )));
        }
        let trainable: Vec<bool> = self.store.iter().map(|(_, p)| p.trainable).collect();
        self.store = snapshot.clone();
        for (id, t) in self.store.ids().collect::<Vec<_>>().into_iter().zip(trainable) {
            self.store.get_mut(id).trainable = t;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tasks(n: usize) -> Vec<TaskSpec> {
        (0..n).map(|i| TaskSpec::new(format!("t{i}"), 2)).collect()
    }

    #[test]
    fn architecture_task_count_rules() {
        assert!(Model::new(ModelConfig::new(Architecture::Coupled, tasks(3), 5)).is_err());
        assert!(Model::new(ModelConfig::new(Architecture::Uniform, tasks(1), 5)).is_err());
        assert!(Model::new(ModelConfig::new(Architecture::Shared, tasks(1), 5)).is_err());
        assert!(Model::new(ModelConfig::new(Architecture::Single, tasks(1), 5).with_sizes(4, 3, 3)).is_ok());
        let mut bad = tasks(2);
        bad[1].lambda = 0.0;
        assert!(Model::new(ModelConfig::new(Architecture::Uniform, bad, 5)).is_err());
    }

    #[test]
    fn unknown_task_and_empty_input() {
        let model = Model::new(ModelConfig::new(Architecture::Uniform, tasks(2), 5).with_sizes(4, 3, 3)).unwrap();
        assert!(matches!(model.logits(2, &[1]), Err(Error::Task { task: 2, count: 2 })));
        assert!(matches!(model.logits(0, &[]), Err(Error::Input(_))));
        assert!(matches!(model.logits(0, &[5]), Err(Error::Index { .. })));
    }

    #[test]
    fn architecture_names_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
        }
        assert!("bogus".parse::<Architecture>().is_err());
    }
}
