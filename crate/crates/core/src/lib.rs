//! Virtual inverted pendulum (VIP) balancing with AI assistance.
//!
//! The crate covers the whole offline pipeline: pendulum physics, a small
//! neural-network library, pilot digital twins, RL/BC/AIRL assistant
//! training, a crash-probability predictor, suggestion gating, trial and
//! experiment harnesses, and the performance metrics used to compare
//! assisted against unassisted balancing.

pub mod assistant;
pub mod crashpred;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nnet;
pub mod physics;
pub mod pilots;
pub mod rl;
pub mod rng;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/physics.md")]
    mod physics {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/pilots.md")]
    mod pilots {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/gating.md")]
    mod gating {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/live.md")]
    mod live {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
