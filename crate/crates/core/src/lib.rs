//! Training toolkit for clonal classifiers.
//!
//! A baseline MLP is trained with softmax cross-entropy and frozen. For every
//! training example its logits pick out the confusing categories (those with a
//! positive logit), which together with the ground truth form a multi-warm
//! label. A second network, the clonal classifier, is then trained from
//! scratch with the focusing-picking loss: cross-entropy on a softmax
//! re-weighted by the student-minus-baseline probability difference, plus an
//! attention term pulling the plain softmax towards the multi-warm label,
//! minus an entropy bonus. At test time only the clonal network runs, with a
//! plain softmax.
//!
//! Label smoothing and standard distillation are provided as comparison
//! losses, every loss has an analytic gradient checked against central
//! differences, and a deterministic trainer writes CSV metrics and text
//! checkpoints.

pub mod autograd;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod error;
pub mod labels;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
