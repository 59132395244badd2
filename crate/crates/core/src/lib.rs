//! Early-exaggeration t-SNE, the spectral-clustering chain it converges to,
//! a general averaging dynamical system, and per-cluster contraction diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affinity;
pub mod cli;
pub mod diagnostics;
pub mod dynsys;
pub mod error;
pub mod generate;
pub mod geometry;
pub mod io;
pub mod plot;
pub mod run;
mod scalar;
pub mod spectral;
pub mod tsne;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Dataset64 = affinity::Dataset<f64>;
pub type Dataset32 = affinity::Dataset<f32>;
pub type AffinityMatrix64 = affinity::AffinityMatrix<f64>;
pub type AffinityMatrix32 = affinity::AffinityMatrix<f32>;
pub type Embedding64 = tsne::Embedding<f64>;
pub type Embedding32 = tsne::Embedding<f32>;
pub type ExaggerationConfig64 = tsne::ExaggerationConfig<f64>;
pub type TransitionMatrix64 = spectral::TransitionMatrix<f64>;
pub type DynState64 = dynsys::DynState<f64>;
pub type DiagnosticsReport64 = diagnostics::DiagnosticsReport<f64>;
