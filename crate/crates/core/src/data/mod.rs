//! Corpora, vocabularies, pretrained embeddings and synthetic task families.

mod corpus;
mod embeddings;
mod kfold;
mod synthetic;
mod vocab;

pub use corpus::{load_corpus, tokenize, Corpus, Example, Split, Splits};
pub use embeddings::{load_embeddings, write_embeddings, LoadedEmbeddings};
pub use kfold::kfold_splits;
pub use synthetic::{make_synthetic_family, LabelRule, SyntheticConfig, SyntheticFamily};
pub use vocab::{build_vocab, Vocabulary, UNKNOWN_TOKEN};
