#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

//! Load forecasting with a cloud-model-normalized transformer.
//!
//! Two encoder-only transformers are trained on a daily load series, one
//! with layer normalization and one with cloud normalization. Their
//! validation predictions are fused with simplex weights found by particle
//! swarm optimization, and the three resulting forecasters are compared with
//! MAPE, win/loss counts, Friedman ranks and Wilcoxon signed-rank tests.

pub mod cli;
pub mod cloud;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod forecaster;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod stats;

pub use error::{Error, Result};
