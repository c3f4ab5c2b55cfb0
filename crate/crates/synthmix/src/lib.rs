//! SynthMix: adversarial mix-up training for cross-modality domain
//! adaptation segmentation, at desk scale.
//!
//! The crate provides the full pipeline: binary mix-up mask generation
//! ([`maskgen`]), composition of the five per-iteration input kinds
//! ([`mixer`]), the patch-level mixup inspector ([`inspector`]), a compact
//! dual-GAN translation/segmentation backbone ([`gan`]), segmentation
//! metrics with significance testing ([`metrics`]), a synthetic
//! cross-modality benchmark ([`dataio`]), and the training/evaluation
//! harness behind the `synthmix` CLI ([`harness`]).

pub mod checkpoint;
pub mod dataio;
pub mod error;
pub mod gan;
pub mod harness;
pub mod inspector;
pub mod maskgen;
pub mod metrics;
pub mod mixer;
pub mod nn;
pub mod plot;
pub mod rng;

pub use error::{Error, Result};
