//! The run configuration file (TOML).
//!
//! ```toml
//! format_version = 1
//! output_dir = "runs/shared"
//! seed = 7
//!
//! [model]
//! architecture = "shared"      # single | uniform | coupled | shared
//! hidden_size = 50
//!
//! [train]
//! max_epochs = 30
//!
//! [[task]]
//! name = "sst2"
//! train = "data/sst2.train.tsv"
//! dev = "data/sst2.dev.tsv"
//! test = "data/sst2.test.tsv"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use mtrnn::data::{build_vocab, load_corpus, Corpus, Vocabulary};
use mtrnn::lm::LmConfig;
use mtrnn::train::{TaskData, TrainConfig};
use mtrnn::{Architecture, ModelConfig, TaskSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Checkpoint whose `shared.*` parameters initialise the model.
    #[serde(default)]
    pub warm_start: Option<PathBuf>,
    /// Write measured epoch times into the metrics; off keeps reruns
    /// byte-identical.
    #[serde(default)]
    pub record_wall_clock: bool,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub pretrain: LmConfig,
    #[serde(rename = "task")]
    pub tasks: Vec<TaskSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub architecture: Architecture,
    #[serde(default = "default_hidden")]
    pub hidden_size: usize,
    #[serde(default = "default_embedding")]
    pub task_embedding_size: usize,
    #[serde(default = "default_embedding")]
    pub shared_embedding_size: usize,
    #[serde(default)]
    pub tie_gate_input_weights: bool,
}

fn default_hidden() -> usize {
    50
}

fn default_embedding() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub min_frequency: usize,
    /// word2vec text file loaded into every embedding table of matching width.
    pub embeddings: Option<PathBuf>,
    /// Share of a task's training file moved to dev when it has no dev file.
    pub dev_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            min_frequency: 1,
            embeddings: None,
            dev_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub name: String,
    pub train: PathBuf,
    #[serde(default)]
    pub dev: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Inferred from the training labels when absent.
    #[serde(default)]
    pub classes: Option<usize>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_lambda() -> f64 {
    1.0
}

/// Corpora, vocabulary and id-mapped splits of every task.
#[derive(Clone, Debug)]
pub struct LoadedData {
    pub corpora: Vec<Corpus>,
    pub vocab: Vocabulary,
    pub tasks: Vec<TaskData>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| e.context(path.display()))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        #[derive(Deserialize)]
        struct Version {
            format_version: Option<u32>,
        }
        let version: Version = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        match version.format_version {
            Some(CONFIG_VERSION) => {}
            Some(v) => {
                return Err(CliError::config(format!(
                    "format_version {v} is not supported (expected {CONFIG_VERSION})"
                )))
            }
            None => return Err(CliError::config("missing key `format_version`")),
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs serialise")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(p) = &mut self.warm_start {
            fix(p);
        }
        if let Some(p) = &mut self.data.embeddings {
            fix(p);
        }
        for t in &mut self.tasks {
            fix(&mut t.train);
            if let Some(p) = &mut t.dev {
                fix(p);
            }
            if let Some(p) = &mut t.test {
                fix(p);
            }
        }
    }

    /// Checks everything that can be checked without reading data.
    pub fn validate(&self) -> CliResult<()> {
        if self.tasks.is_empty() {
            return Err(CliError::config("at least one [[task]] is required"));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if t.name.trim().is_empty() {
                return Err(CliError::config(format!("task[{i}].name is empty")));
            }
            if self.tasks[..i].iter().any(|o| o.name == t.name) {
                return Err(CliError::config(format!("task[{i}].name {:?} is duplicated", t.name)));
            }
        }
        if !(0.0..1.0).contains(&self.data.dev_fraction) {
            return Err(CliError::config("data.dev_fraction must be in [0, 1)"));
        }
        self.train.validate().map_err(|e| CliError::from(e).context("[train]"))?;
        // Model shape rules (task counts, sizes, λ) need only the class counts.
        let probe = ModelConfig {
            tasks: self
                .tasks
                .iter()
                .map(|t| TaskSpec {
                    name: t.name.clone(),
                    classes: t.classes.unwrap_or(2),
                    lambda: t.lambda,
                })
                .collect(),
            vocab_size: 2,
            ..self.model_config_skeleton()
        };
        probe.validate().map_err(|e| CliError::from(e).context("[model]"))?;
        Ok(())
    }

    fn model_config_skeleton(&self) -> ModelConfig {
        ModelConfig {
            architecture: self.model.architecture,
            tasks: vec![],
            vocab_size: 0,
            hidden_size: self.model.hidden_size,
            task_embedding_size: self.model.task_embedding_size,
            shared_embedding_size: self.model.shared_embedding_size,
            tie_gate_input_weights: self.model.tie_gate_input_weights,
            seed: self.seed,
        }
    }

    /// The model configuration for the loaded data.
    pub fn model_config(&self, data: &LoadedData) -> ModelConfig {
        ModelConfig {
            tasks: self
                .tasks
                .iter()
                .zip(&data.corpora)
                .map(|(t, c)| TaskSpec {
                    name: t.name.clone(),
                    classes: c.class_count,
                    lambda: t.lambda,
                })
                .collect(),
            vocab_size: data.vocab.len(),
            ..self.model_config_skeleton()
        }
    }

    /// Reads every task's files into one corpus per task.
    pub fn load_corpora(&self) -> CliResult<Vec<Corpus>> {
        let mut corpora = Vec::with_capacity(self.tasks.len());
        for (i, t) in self.tasks.iter().enumerate() {
            let read = |key: &str, path: &Path| -> CliResult<Corpus> {
                if !path.is_file() {
                    return Err(CliError::config(format!(
                        "task[{i}].{key}: dataset file {} does not exist",
                        path.display()
                    )));
                }
                load_corpus(path, t.classes).map_err(|e| CliError::from(e).context(format!("task[{i}].{key}")))
            };
            let train = read("train", &t.train)?;
            let dev = t.dev.as_deref().map(|p| read("dev", p)).transpose()?;
            let test = t.test.as_deref().map(|p| read("test", p)).transpose()?;
            let has_dev = dev.is_some();
            let mut corpus = Corpus::assemble(t.name.clone(), train, dev, test)?;
            if let Some(c) = t.classes {
                corpus.class_count = c;
            }
            if !has_dev && self.data.dev_fraction > 0.0 {
                corpus.carve_dev(self.data.dev_fraction, self.seed)?;
            }
            corpora.push(corpus);
        }
        Ok(corpora)
    }

    /// Reads every task's files and builds the union vocabulary.
    pub fn load_data(&self) -> CliResult<LoadedData> {
        let corpora = self.load_corpora()?;
        let refs: Vec<&Corpus> = corpora.iter().collect();
        let vocab = build_vocab(&refs, self.data.min_frequency)?;
        let tasks = corpora.iter().map(|c| TaskData::from_corpus(c, &vocab)).collect();
        Ok(LoadedData { corpora, vocab, tasks })
    }
}
