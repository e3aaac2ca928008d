//! A family of related classification tasks with known structure.
//!
//! Some tokens carry a latent polarity of +1 or −1 that is the same for every
//! task; the rest are neutral. Each task labels a sequence by its own rule
//! applied to the polarity sum, so what one task learns about token polarity
//! transfers to the others. Labels are flipped with probability
//! `label_noise`, which fixes the Bayes-optimal accuracy at
//! `1 − label_noise` for every (binary) rule.
//!
//! Neutral tokens also have local order: each neutral token has a fixed
//! successor that follows it with probability `neutral_successor_rate`, so
//! the text has sequential structure for a language model to pick up. This
//! does not affect the labels.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, Example, Splits};
use crate::error::{Error, Result};

/// Maps a polarity sum to a binary label. Zero polarity always gives the
/// default label 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelRule {
    /// 1 if the sum is positive.
    Sign,
    /// 1 if the sum is at least `k` (`k > 0`).
    AtLeast(i64),
    /// 1 if the sum is at most `-k` (`k > 0`).
    AtMostNegative(i64),
}

impl LabelRule {
    pub fn label(self, polarity_sum: i64) -> usize {
        let positive = match self {
            LabelRule::Sign => polarity_sum > 0,
            LabelRule::AtLeast(k) => polarity_sum >= k,
            LabelRule::AtMostNegative(k) => polarity_sum <= -k,
        };
        usize::from(positive)
    }

    pub fn default_label(self) -> usize {
        self.label(0)
    }

    /// Rule for the `index`-th task of a family.
    pub fn for_task(index: usize) -> Self {
        match index % 3 {
            0 => LabelRule::Sign,
            1 => LabelRule::AtLeast(2),
            _ => LabelRule::AtMostNegative(2),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub task_count: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    /// Distinct tokens, polar and neutral.
    pub vocab_size: usize,
    /// How many tokens carry polarity (split evenly between signs).
    pub polar_tokens: usize,
    /// Probability that a position holds a polar token.
    pub polar_rate: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub label_noise: f64,
    /// Probability that a neutral token after a neutral token is its fixed
    /// successor rather than a uniform draw.
    pub neutral_successor_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            task_count: 2,
            train_size: 200,
            dev_size: 200,
            test_size: 1000,
            vocab_size: 40,
            polar_tokens: 12,
            polar_rate: 0.35,
            min_len: 5,
            max_len: 10,
            label_noise: 0.0,
            neutral_successor_rate: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFamily {
    pub corpora: Vec<Corpus>,
    pub rules: Vec<LabelRule>,
    pub tokens: Vec<String>,
    /// Polarity of each entry of `tokens`.
    pub polarity: Vec<i64>,
    pub bayes_accuracy: Vec<f64>,
}

impl SyntheticFamily {
    pub fn polarity_sum(&self, tokens: &[String]) -> i64 {
        tokens
            .iter()
            .map(|t| {
                self.tokens
                    .iter()
                    .position(|x| x == t)
                    .map_or(0, |i| self.polarity[i])
            })
            .sum()
    }
}

pub fn make_synthetic_family(cfg: &SyntheticConfig) -> Result<SyntheticFamily> {
    let neutral = cfg.vocab_size.saturating_sub(cfg.polar_tokens);
    if cfg.task_count == 0
        || cfg.train_size == 0
        || cfg.vocab_size == 0
        || cfg.polar_tokens < 2
        || neutral == 0
        || cfg.min_len == 0
        || cfg.min_len > cfg.max_len
    {
        return Err(Error::Config(format!("degenerate synthetic family settings: {cfg:?}")));
    }
    if !(0.0..=1.0).contains(&cfg.polar_rate)
        || !(0.0..=1.0).contains(&cfg.neutral_successor_rate)
        || !(0.0..0.5).contains(&cfg.label_noise)
    {
        return Err(Error::Config(
            "polar_rate and neutral_successor_rate must be in [0, 1] and label_noise in [0, 0.5)".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tokens: Vec<String> = (0..cfg.vocab_size).map(|i| format!("w{i:03}")).collect();
    tokens.shuffle(&mut rng);
    let polarity: Vec<i64> = (0..cfg.vocab_size)
        .map(|i| match i {
            i if i < cfg.polar_tokens / 2 => 1,
            i if i < cfg.polar_tokens => -1,
            _ => 0,
        })
        .collect();
    let mut successor: Vec<usize> = (cfg.polar_tokens..cfg.vocab_size).collect();
    successor.shuffle(&mut rng);

    let rules: Vec<LabelRule> = (0..cfg.task_count).map(LabelRule::for_task).collect();
    let total = cfg.train_size + cfg.dev_size + cfg.test_size;
    let corpora = rules
        .iter()
        .enumerate()
        .map(|(m, &rule)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(m as u64 + 1);
            let examples = (0..total)
                .map(|_| {
                    let len = rng.gen_range(cfg.min_len..=cfg.max_len);
                    let mut sum = 0;
                    let mut prev: Option<usize> = None;
                    let toks = (0..len)
                        .map(|_| {
                            let i = if rng.gen_bool(cfg.polar_rate) {
                                rng.gen_range(0..cfg.polar_tokens)
                            } else {
                                match prev {
                                    Some(p) if p >= cfg.polar_tokens && rng.gen_bool(cfg.neutral_successor_rate) => {
                                        successor[p - cfg.polar_tokens]
                                    }
                                    _ => rng.gen_range(cfg.polar_tokens..cfg.vocab_size),
                                }
                            };
                            prev = Some(i);
                            sum += polarity[i];
                            tokens[i].clone()
                        })
                        .collect();
                    let mut label = rule.label(sum);
                    if rng.gen_bool(cfg.label_noise) {
                        label = 1 - label;
                    }
                    Example { tokens: toks, label }
                })
                .collect();
            let splits = Splits {
                train: (0..cfg.train_size).collect(),
                dev: (cfg.train_size..cfg.train_size + cfg.dev_size).collect(),
                test: (cfg.train_size + cfg.dev_size..total).collect(),
            };
            Corpus {
                name: format!("synthetic{m}"),
                examples,
                class_count: 2,
                splits,
            }
        })
        .collect();
    Ok(SyntheticFamily {
        corpora,
        bayes_accuracy: vec![1.0 - cfg.label_noise; cfg.task_count],
        rules,
        tokens,
        polarity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible() {
        let cfg = SyntheticConfig {
            seed: 11,
            ..SyntheticConfig::default()
        };
        assert_eq!(make_synthetic_family(&cfg).unwrap(), make_synthetic_family(&cfg).unwrap());
    }

    #[test]
    fn neutral_sequences_get_default_label() {
        for m in 0..3 {
            let rule = LabelRule::for_task(m);
            assert_eq!(rule.label(0), rule.default_label());
            assert_eq!(rule.default_label(), 0);
        }
        let cfg = SyntheticConfig {
            polar_rate: 0.0,
            ..SyntheticConfig::default()
        };
        let fam = make_synthetic_family(&cfg).unwrap();
        for c in &fam.corpora {
            assert!(c.examples.iter().all(|e| e.label == 0));
        }
    }

    #[test]
    fn labels_follow_rules_without_noise() {
        let fam = make_synthetic_family(&SyntheticConfig::default()).unwrap();
        for (c, rule) in fam.corpora.iter().zip(&fam.rules) {
            for e in &c.examples {
                assert_eq!(e.label, rule.label(fam.polarity_sum(&e.tokens)));
            }
        }
        assert_eq!(fam.bayes_accuracy, vec![1.0, 1.0]);
    }

    #[test]
    fn degenerate_sizes_rejected() {
        for cfg in [
            SyntheticConfig {
                train_size: 0,
                ..SyntheticConfig::default()
            },
            SyntheticConfig {
                polar_tokens: 40,
                ..SyntheticConfig::default()
            },
            SyntheticConfig {
                min_len: 4,
                max_len: 3,
                ..SyntheticConfig::default()
            },
        ] {
            assert!(matches!(make_synthetic_family(&cfg), Err(Error::Config(_))));
        }
    }
}
