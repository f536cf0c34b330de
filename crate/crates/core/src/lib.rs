//! Sequence-to-sequence variational autoencoders, variational
//! encoder-decoders and variational attention for text, built on a small
//! reverse-mode autodiff core.

pub mod attention;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod lstm;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod probes;
pub mod rng;
pub mod seq2seq;
pub mod tape;
pub mod tensor;
pub mod text;
pub mod train;
pub mod variational;

pub use error::{Error, Result};
