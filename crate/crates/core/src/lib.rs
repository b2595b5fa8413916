//! Deterministic instability analysis and iterative magnitude pruning.
//!
//! Train two copies of a network from the same state under different SGD
//! noise, interpolate linearly between the results and measure how much the
//! error rises along the way. The same machinery drives iterative magnitude
//! pruning with rewinding and its random baselines.

pub mod data;
pub mod engine;
pub mod error;
pub mod instability;
pub mod metrics;
pub mod pruning;
pub mod runner;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/running.md")]
    mod running {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/instability.md")]
    mod instability {}
    #[doc = include_str!("../../../book/src/pruning.md")]
    mod pruning {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/config.md")]
    mod config {}
    #[doc = include_str!("../../../book/src/outputs.md")]
    mod outputs {}
    #[doc = include_str!("../../../book/src/checkpoints.md")]
    mod checkpoints {}
}
