use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercases and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<String>,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?} (train, dev or test)")))
    }
}

/// Index sets into [`Corpus::examples`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub examples: Vec<Example>,
    pub class_count: usize,
    pub splits: Splits,
}

impl Corpus {
    /// A corpus whose examples all belong to the training split.
    pub fn new(name: impl Into<String>, examples: Vec<Example>, class_count: usize) -> Result<Self> {
        let name = name.into();
        for (i, ex) in examples.iter().enumerate() {
            if ex.label >= class_count {
                return Err(Error::Label {
                    label: ex.label,
                    classes: class_count,
                });
            }
            if ex.tokens.is_empty() {
                return Err(Error::Input(format!("{name}: example {i} has no tokens")));
            }
        }
        let splits = Splits {
            train: (0..examples.len()).collect(),
            ..Splits::default()
        };
        Ok(Corpus {
            name,
            examples,
            class_count,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Example> {
        self.splits.get(split).iter().map(move |&i| &self.examples[i])
    }

    /// Joins separately loaded files into one corpus with declared splits.
    pub fn assemble(name: impl Into<String>, train: Corpus, dev: Option<Corpus>, test: Option<Corpus>) -> Result<Self> {
        let class_count = [Some(&train), dev.as_ref(), test.as_ref()]
            .into_iter()
            .flatten()
            .map(|c| c.class_count)
            .max()
            .unwrap_or(0);
        let mut examples = Vec::new();
        let mut splits = Splits::default();
        for (part, slot) in [
            (Some(train), &mut splits.train),
            (dev, &mut splits.dev),
            (test, &mut splits.test),
        ] {
            if let Some(part) = part {
                let start = examples.len();
                slot.extend(start..start + part.examples.len());
                examples.extend(part.examples);
            }
        }
        Ok(Corpus {
            name: name.into(),
            examples,
            class_count,
            splits,
        })
    }

    /// Moves a seeded `fraction` of the training split into an empty dev split.
    pub fn carve_dev(&mut self, fraction: f64, seed: u64) -> Result<()> {
        if !self.splits.dev.is_empty() {
            return Ok(());
        }
        let moved = carve(&mut self.splits.train, fraction, seed)?;
        self.splits.dev = moved;
        Ok(())
    }

    /// Seeded three-way split of a single-file corpus.
    pub fn split_seeded(&mut self, dev_fraction: f64, test_fraction: f64, seed: u64) -> Result<()> {
        let mut all: Vec<usize> = (0..self.examples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        all.shuffle(&mut rng);
        let n = all.len();
        let n_test = (n as f64 * test_fraction).round() as usize;
        let n_dev = (n as f64 * dev_fraction).round() as usize;
        if n_test + n_dev >= n {
            return Err(Error::Config(format!(
                "split fractions leave no training data for {} ({n} examples)",
                self.name
            )));
        }
        let mut test = all.split_off(n - n_test);
        let mut dev = all.split_off(all.len() - n_dev);
        all.sort_unstable();
        dev.sort_unstable();
        test.sort_unstable();
        self.splits = Splits { train: all, dev, test };
        Ok(())
    }

    pub fn average_length(&self) -> f64 {
        if self.examples.is_empty() {
            return 0.0;
        }
        self.examples.iter().map(|e| e.tokens.len()).sum::<usize>() as f64 / self.examples.len() as f64
    }
}

fn carve(train: &mut Vec<usize>, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("dev fraction {fraction} must be in [0, 1)")));
    }
    let mut shuffled = train.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = (train.len() as f64 * fraction).round() as usize;
    let mut moved = shuffled.split_off(train.len() - n);
    shuffled.sort_unstable();
    moved.sort_unstable();
    *train = shuffled;
    Ok(moved)
}

/// Reads `label<TAB>text` lines. Blank lines are skipped; labels must be
/// below `classes` when given, otherwise the class count is inferred.
pub fn load_corpus(path: impl AsRef<Path>, classes: Option<usize>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (label, body) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(line_no, "expected label<TAB>text".into()))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("label {label:?} is not a non-negative integer")))?;
        if let Some(c) = classes {
            if label >= c {
                return Err(Error::Label { label, classes: c });
            }
        }
        let tokens = tokenize(body);
        if tokens.is_empty() {
            return Err(parse_err(line_no, "no tokens after the label".into()));
        }
        examples.push(Example { tokens, label });
    }
    if examples.is_empty() {
        return Err(Error::Config(format!("{} contains no examples", path.display())));
    }
    let class_count = classes.unwrap_or_else(|| examples.iter().map(|e| e.label).max().unwrap_or(0) + 1);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Corpus::new(name, examples, class_count)
}
