//! Tagged secret-key-rate analysis for Gaussian-modulated, homodyne-detected
//! continuous-variable QKD with stochastic device imperfections.
//!
//! The crate is organised bottom-up:
//!
//! - [`distributions`]: scalar laws for stage gains and noise terms.
//! - [`keyrate`]: closed-form GG02 quantities in shot-noise units (mutual
//!   information, Bob's entropy, Holevo bound).
//! - [`dv`]: discrete-variable tagging rates, kept for cross-checking the
//!   tagging algebra.
//! - [`pipeline`]: the stage model `x' = a x + sqrt(1 - a^2) b`, its moment
//!   recursion, effective channel extraction and a Monte-Carlo simulator.
//! - [`tagging`]: untagged probability, cutoff mapping, the tagged rate and
//!   cutoff grid search.
//! - [`sweep`]: presets, fiber-distance sweeps, max-distance search and CSV.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`, which is what the CLI uses.

#![forbid(unsafe_code)]
// `!(x >= 0)` is the NaN-rejecting form used in every validator
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributions;
pub mod dv;
mod error;
pub mod keyrate;
pub mod pipeline;
mod scalar;
pub mod sweep;
pub mod tagging;

pub use distributions::{Distribution, DistributionKind};
pub use error::{Error, Result};
pub use keyrate::{ChannelTerms, EffectiveChannel, KeyRateBreakdown, SystemParams};
pub use pipeline::{EffectiveParams, Pipeline, StageLabel, StageTransform};
pub use scalar::Real;
pub use sweep::{MaxDistance, Preset, SweepConfig, SweepRow};
pub use tagging::{CutoffPlan, KGrid, MappedChannel, TaggedRateInput};

pub type Distribution64 = Distribution<f64>;
pub type SystemParams64 = SystemParams<f64>;
pub type EffectiveChannel64 = EffectiveChannel<f64>;
pub type KeyRateBreakdown64 = KeyRateBreakdown<f64>;
pub type StageTransform64 = StageTransform<f64>;
pub type Pipeline64 = Pipeline<f64>;
pub type EffectiveParams64 = EffectiveParams<f64>;
pub type CutoffPlan64 = CutoffPlan<f64>;
pub type Preset64 = Preset<f64>;
pub type SweepRow64 = SweepRow<f64>;

pub type Distribution32 = Distribution<f32>;
pub type SystemParams32 = SystemParams<f32>;
pub type Pipeline32 = Pipeline<f32>;
