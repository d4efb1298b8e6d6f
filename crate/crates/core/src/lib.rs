//! Recurrent graph neural network for discrete-time dynamic graphs trained
//! with a predictive, reconstructive and contrastive objective, plus the
//! evaluation and temporal-network diagnostics around it.

pub mod analysis;
pub mod autograd;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod rng;
pub mod sparse;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
