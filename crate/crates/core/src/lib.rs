//! Short-term wind-speed forecasting with a TCN front end feeding a
//! transformer encoder built from causal windowed self-attention and
//! external-memory attention.
//!
//! Everything runs on the small reverse-mode autodiff engine in [`tensor`].
//! The `examples/` directory has one runnable program per capability; the
//! `tcnformer` binary wraps [`cli::dispatch`].

pub mod attention;
pub mod cli;
pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fetch;
pub mod model;
pub mod nn;
pub mod tcn;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
