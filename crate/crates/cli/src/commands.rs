//! The command implementations. Each returns what it wrote so tests can
//! drive them without spawning a process.

use std::io::Write;
use std::path::{Path, PathBuf};

use mtrnn::checkpoint::Checkpoint;
use mtrnn::data::{load_embeddings, make_synthetic_family, tokenize, Corpus, Split, SyntheticConfig};
use mtrnn::lm::{pretrain_lm, LmReport};
use mtrnn::train::{evaluate_with, fine_tune, joint_train, Evaluation, TaskData, TrainReport};
use mtrnn::{tensor, Architecture, Exec, Model};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{LoadedData, ModelSection, RunConfig, TaskSection, CONFIG_VERSION};
use crate::error::{write_error, CliError, CliResult};
use crate::output::{
    write_csv, write_json_lines_to, write_metrics, write_text, MetricRecord, PerplexityRecord, PredictionRecord,
    TraceRecord, OUTPUT_VERSION,
};

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub final_checkpoint: PathBuf,
    /// Per task; `None` when the task never produced a best epoch.
    pub best_checkpoints: Vec<Option<PathBuf>>,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub report: LmReport,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub report: TrainReport,
    pub task: usize,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub evaluation: Evaluation,
    pub predictions: PathBuf,
}

fn checkpoint_dir(dir: &Path) -> PathBuf {
    dir.join("checkpoints")
}

fn save(ck: &Checkpoint, path: &Path) -> CliResult<()> {
    let text = ck.to_json()?;
    write_text(path, &text)
}

/// Finds a task by name, falling back to its index.
pub fn resolve_task(names: &[String], key: &str) -> CliResult<usize> {
    if let Some(i) = names.iter().position(|n| n == key) {
        return Ok(i);
    }
    match key.parse::<usize>() {
        Ok(i) if i < names.len() => Ok(i),
        _ => Err(CliError::config(format!(
            "unknown task {key:?}; known tasks: {}",
            names.join(", ")
        ))),
    }
}

fn task_names(cfg: &RunConfig) -> Vec<String> {
    cfg.tasks.iter().map(|t| t.name.clone()).collect()
}

/// Model with warm start and pretrained embeddings applied.
fn build_model(cfg: &RunConfig, data: &LoadedData) -> CliResult<Model> {
    let mut model = Model::new(cfg.model_config(data))?;
    if let Some(path) = &cfg.warm_start {
        let ck = Checkpoint::load(path).map_err(|e| CliError::from(e).context("warm_start"))?;
        if ck.vocabulary != data.vocab {
            return Err(CliError::config(format!(
                "warm_start: {} was built on a different vocabulary",
                path.display()
            )));
        }
        let source = ck.to_model().map_err(|e| CliError::from(e).context("warm_start"))?;
        let copied = model
            .store
            .copy_matching(&source.store, "shared.")
            .map_err(|e| CliError::from(e).context("warm_start"))?;
        if copied == 0 {
            return Err(CliError::config(format!(
                "warm_start: {} has no shared parameters this model can use",
                path.display()
            )));
        }
    }
    if let Some(path) = &cfg.data.embeddings {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(2);
        let mut used = 0;
        for table in model.embedding_tables() {
            let loaded = match load_embeddings(path, &data.vocab, Some(table.dim), &mut rng) {
                Ok(l) => l,
                Err(mtrnn::Error::Config(_)) => continue,
                Err(e) => return Err(CliError::from(e).context("data.embeddings")),
            };
            model.store.get_mut(table.param).value = loaded.matrix;
            used += 1;
        }
        if used == 0 {
            return Err(CliError::config(format!(
                "data.embeddings: vector width of {} matches no embedding table",
                path.display()
            )));
        }
    }
    Ok(model)
}

pub fn train(cfg: &RunConfig, exec: Exec) -> CliResult<TrainOutcome> {
    let data = cfg.load_data()?;
    let mut model = build_model(cfg, &data)?;
    let train_cfg = mtrnn::train::TrainConfig {
        exec,
        ..cfg.train.clone()
    };
    let run = joint_train(&mut model, &data.tasks, &train_cfg)?;

    let names = task_names(cfg);
    let records = MetricRecord::from_report(&run.report, &names, cfg.record_wall_clock);
    write_metrics(&cfg.output_dir, "metrics", &records)?;

    let dir = checkpoint_dir(&cfg.output_dir);
    let final_checkpoint = dir.join("final.json");
    let meta = json!({ "command": "train", "epochs_run": run.report.epochs_run });
    save(&Checkpoint::capture(&model, &data.vocab, meta), &final_checkpoint)?;

    let mut best_checkpoints = Vec::with_capacity(names.len());
    for (m, name) in names.iter().enumerate() {
        let Some(snapshot) = &run.best[m] else {
            best_checkpoints.push(None);
            continue;
        };
        let mut best = model.clone();
        best.restore(&snapshot.params)?;
        let meta = json!({ "command": "train", "task": name, "best_epoch": snapshot.epoch });
        let path = dir.join(format!("best-task{m}.json"));
        save(&Checkpoint::capture(&best, &data.vocab, meta), &path)?;
        best_checkpoints.push(Some(path));
    }
    Ok(TrainOutcome {
        report: run.report,
        final_checkpoint,
        best_checkpoints,
    })
}

pub fn pretrain(cfg: &RunConfig, exec: Exec) -> CliResult<PretrainOutcome> {
    if cfg.model.architecture != Architecture::Shared {
        return Err(CliError::config(format!(
            "pretraining needs the shared architecture, not {}",
            cfg.model.architecture
        )));
    }
    let data = cfg.load_data()?;
    let mut model = build_model(cfg, &data)?;
    let sentences: Vec<Vec<usize>> = data
        .tasks
        .iter()
        .flat_map(|t| t.train.iter().chain(&t.dev))
        .map(|s| s.ids.clone())
        .collect();
    let lm_cfg = mtrnn::lm::LmConfig {
        exec,
        ..cfg.pretrain.clone()
    };
    let report = pretrain_lm(&mut model, &sentences, &lm_cfg)?;

    let mut rows = vec![PerplexityRecord {
        format_version: OUTPUT_VERSION,
        epoch: 0,
        heldout_perplexity: report.initial_heldout_perplexity,
        train_nll: None,
    }];
    rows.extend(report.epochs.iter().map(|e| PerplexityRecord {
        format_version: OUTPUT_VERSION,
        epoch: e.epoch,
        heldout_perplexity: e.heldout_perplexity,
        train_nll: Some(e.train_nll),
    }));
    write_csv(&cfg.output_dir.join("lm_perplexity.csv"), &rows)?;

    let checkpoint = checkpoint_dir(&cfg.output_dir).join("pretrained.json");
    let meta = json!({ "command": "pretrain", "epochs": report.epochs.len() });
    save(&Checkpoint::capture(&model, &data.vocab, meta), &checkpoint)?;
    Ok(PretrainOutcome { report, checkpoint })
}

/// A checkpoint's model plus the configured data mapped through its vocabulary.
fn load_for_config(cfg: &RunConfig, path: &Path) -> CliResult<(Checkpoint, Model, Vec<TaskData>)> {
    let ck = Checkpoint::load(path).map_err(|e| CliError::from(e).context("checkpoint"))?;
    let model = ck.to_model().map_err(|e| CliError::from(e).context("checkpoint"))?;
    if ck.architecture != cfg.model.architecture {
        return Err(CliError::config(format!(
            "checkpoint holds a {} model but the config asks for {}",
            ck.architecture, cfg.model.architecture
        )));
    }
    let stored: Vec<&str> = ck.model.tasks.iter().map(|t| t.name.as_str()).collect();
    let configured: Vec<&str> = cfg.tasks.iter().map(|t| t.name.as_str()).collect();
    if stored != configured {
        return Err(CliError::config(format!(
            "checkpoint tasks {stored:?} differ from configured tasks {configured:?}"
        )));
    }
    let corpora = cfg.load_corpora()?;
    for (i, (c, spec)) in corpora.iter().zip(&ck.model.tasks).enumerate() {
        if c.class_count > spec.classes {
            return Err(CliError::config(format!(
                "task[{i}] data has {} classes but the checkpoint head has {}",
                c.class_count, spec.classes
            )));
        }
    }
    let tasks = corpora.iter().map(|c| TaskData::from_corpus(c, &ck.vocabulary)).collect();
    Ok((ck, model, tasks))
}

/// Fine-tunes one task of a trained checkpoint. The new checkpoint keeps
/// the input's metadata.
pub fn finetune(
    cfg: &RunConfig,
    checkpoint: &Path,
    task: &str,
    epochs: Option<usize>,
    output_dir: Option<&Path>,
    exec: Exec,
) -> CliResult<FinetuneOutcome> {
    let (ck, mut model, tasks) = load_for_config(cfg, checkpoint)?;
    let names = task_names(cfg);
    let m = resolve_task(&names, task)?;
    let mut train_cfg = mtrnn::train::TrainConfig {
        exec,
        ..cfg.train.clone()
    };
    if let Some(e) = epochs {
        train_cfg.max_epochs = e;
    }
    let run = fine_tune(&mut model, m, &tasks, &train_cfg)?;
    run.restore_best(&mut model, m)?;

    let dir = output_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join(format!("finetune-task{m}")));
    let records = MetricRecord::from_report(&run.report, &names, cfg.record_wall_clock);
    write_metrics(&dir, "metrics", &records)?;
    let path = checkpoint_dir(&dir).join("finetuned.json");
    save(&Checkpoint::capture(&model, &ck.vocabulary, ck.metadata.clone()), &path)?;
    Ok(FinetuneOutcome {
        report: run.report,
        task: m,
        checkpoint: path,
    })
}

pub fn eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    task: &str,
    split: Split,
    predictions: Option<&Path>,
    exec: Exec,
) -> CliResult<EvalOutcome> {
    let (_, model, tasks) = load_for_config(cfg, checkpoint)?;
    let m = resolve_task(&task_names(cfg), task)?;
    let examples = tasks[m].split(split);
    if examples.is_empty() {
        return Err(CliError::config(format!(
            "task {} has no {split} split",
            cfg.tasks[m].name
        )));
    }
    let evaluation = evaluate_with(&model, m, examples, exec)?;
    let path = predictions
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join(format!("predictions-task{m}-{split}.csv")));
    write_csv(&path, &PredictionRecord::from_evaluation(&evaluation))?;
    Ok(EvalOutcome {
        evaluation,
        predictions: path,
    })
}

/// Traces every non-blank line of `input`. The flag is false when the model
/// has no gate to trace.
pub fn trace(checkpoint: &Path, task: &str, input: &Path) -> CliResult<(Vec<TraceRecord>, bool)> {
    let ck = Checkpoint::load(checkpoint).map_err(|e| CliError::from(e).context("checkpoint"))?;
    let model = ck.to_model().map_err(|e| CliError::from(e).context("checkpoint"))?;
    let names: Vec<String> = ck.model.tasks.iter().map(|t| t.name.clone()).collect();
    let m = resolve_task(&names, task)?;
    let text = std::fs::read_to_string(input)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", input.display())))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tokens = tokenize(line);
        if tokens.is_empty() {
            continue;
        }
        let ids = ck.vocabulary.ids(&tokens);
        let (probs, gate_trace) = model.trace(m, &tokens, &ids)?;
        records.push(TraceRecord {
            format_version: OUTPUT_VERSION,
            line: i + 1,
            trajectory: model.predict_per_timestep(m, &ids)?,
            prediction: tensor::argmax(&probs),
            tokens,
            gate_trace,
        });
    }
    Ok((records, model.shared_layer().is_some()))
}

pub fn write_trace(records: &[TraceRecord], out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(path) => crate::output::write_json_lines(path, records),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_json_lines_to(&mut lock, records)
                .and_then(|_| lock.flush())
                .map_err(|e| write_error(Path::new("<stdout>"), e))
        }
    }
}

fn write_tsv(path: &Path, corpus: &Corpus, split: Split) -> CliResult<()> {
    let mut text = String::new();
    for ex in corpus.split(split) {
        text.push_str(&format!("{}\t{}\n", ex.label, ex.tokens.join(" ")));
    }
    write_text(path, &text)
}

/// Writes a synthetic task family as TSV files plus a ready-to-run config.
pub fn synth(dir: &Path, synthetic: &SyntheticConfig, architecture: Architecture) -> CliResult<PathBuf> {
    let family = make_synthetic_family(synthetic)?;
    let mut tasks = Vec::new();
    for (m, corpus) in family.corpora.iter().enumerate() {
        let mut section = TaskSection {
            name: format!("task{m}"),
            train: PathBuf::from(format!("task{m}.train.tsv")),
            dev: None,
            test: None,
            classes: Some(corpus.class_count),
            lambda: 1.0,
        };
        write_tsv(&dir.join(&section.train), corpus, Split::Train)?;
        for (split, slot) in [(Split::Dev, &mut section.dev), (Split::Test, &mut section.test)] {
            if corpus.split(split).next().is_some() {
                let file = PathBuf::from(format!("task{m}.{split}.tsv"));
                write_tsv(&dir.join(&file), corpus, split)?;
                *slot = Some(file);
            }
        }
        tasks.push(section);
    }
    let cfg = RunConfig {
        format_version: CONFIG_VERSION,
        output_dir: PathBuf::from("run"),
        seed: synthetic.seed,
        warm_start: None,
        record_wall_clock: false,
        model: ModelSection {
            architecture,
            hidden_size: 16,
            task_embedding_size: 16,
            shared_embedding_size: 16,
            tie_gate_input_weights: false,
        },
        train: Default::default(),
        data: Default::default(),
        pretrain: Default::default(),
        tasks,
    };
    cfg.validate()?;
    let path = dir.join("config.toml");
    write_text(&path, &cfg.to_toml())?;
    Ok(path)
}

