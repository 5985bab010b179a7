//! Core data model and algorithms for progressive patch-size curricula in
//! 3D patch-based segmentation training.
//!
//! The crate is organised bottom-up:
//!
//! * [`volume`] and [`io`]: volumes, patches, crops, resampling, the RVOL file format.
//! * [`schedule`]: patch-size ladders, epoch allocation, batch-size solving and
//!   closed-form cost accounting.
//! * [`rng`] and [`sampler`]: counter-based random streams and batch assembly.
//! * [`synth`]: deterministic synthetic datasets with controllable imbalance.
//! * [`metrics`] and [`stats`]: training traces, Dice, cost ratios and the
//!   nonparametric tests used to compare sampling strategies.

pub mod error;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod stats;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Patch, PatchKind, Shape3, Volume};
