//! Recursive neural networks (RNN) and recursive LSTMs (RLSTM) over binary
//! trees, a synthetic keyword-classification benchmark with controllable
//! sentence length and keyword depth, AdaGrad training with early stopping,
//! and a gradient-ratio probe for vanishing and exploding error signals.

pub mod checkpoint;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod numerics;
pub mod report;
pub mod svg;
pub mod trainer;
pub mod treebank;

pub use error::{Error, Result};
