//! Graph-transformer node classification over dynamic graphs.
//!
//! Every timestep of a [`graph::TemporalGraph`] is batched into fixed-size
//! subgraphs ranked by intimacy ([`batching`]), encoded by a graph
//! transformer, pooled into a GRU and classified ([`model`]). [`training`]
//! drives pretraining, fine-tuning and evaluation; [`stats`] holds the
//! feature analyses. The accompanying book walks through each stage.

pub mod autodiff;
pub mod batching;
pub mod error;
pub mod graph;
pub mod matrix;
pub mod model;
pub mod stats;
pub mod training;

pub use error::{Error, Result};

// Book chapters compile and run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/batching.md")]
    mod batching {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/stats.md")]
    mod stats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
