//! Multi-task recurrent text classification.
//!
//! A peephole LSTM built on a small tape-based reverse-mode differentiator,
//! four ways of wiring it across tasks ([`model::Architecture`]), and the
//! training pipeline around them: stochastic task sampling with Adagrad,
//! fine-tuning, language-model pre-training of the shared layer, gate
//! tracing and checkpoints.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod lm;
pub mod loss;
pub mod lstm;
pub mod model;
pub mod param;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use exec::Exec;
pub use model::{Architecture, Model, ModelConfig, TaskSpec};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Tape, Var};
pub use tensor::{Shape, Tensor};
