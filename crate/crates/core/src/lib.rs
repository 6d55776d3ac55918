//! Data pruning for contrastive dense-retrieval training.

pub mod dataset;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mining;
pub mod pruning_dynamic;
pub mod pruning_static;
pub mod rng;
pub mod schedules;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/datasets.md")]
    struct Datasets;
    #[doc = include_str!("../../../book/src/static-pruning.md")]
    struct StaticPruning;
    #[doc = include_str!("../../../book/src/dynamic-pruning.md")]
    struct DynamicPruning;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    struct Evaluation;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
    #[doc = include_str!("../../../book/src/theory.md")]
    struct Theory;
}
