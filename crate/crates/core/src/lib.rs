//! Unsupervised domain adaptation over precomputed feature matrices with
//! joint (marginal + conditional) features, an adversarially trained shared
//! encoder, top-K correlated label correction, and dynamic distribution
//! alignment.

pub mod alignment;
pub mod config;
pub mod data;
pub mod discrepancy;
pub mod encoder;
pub mod error;
pub mod numerics;
pub mod pipeline;
pub mod topk;

pub use config::{ablate, Component, PipelineConfig};
pub use data::DomainDataset;
pub use error::{Error, Result};
pub use numerics::Matrix;
pub use pipeline::{evaluate, run_cajnet, RunReport};
