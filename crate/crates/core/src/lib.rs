//! Numerical core for autonomous wake exploration over tandem-cylinder spacings.
//!
//! Everything in this crate is a pure function over in-memory data and only
//! needs `alloc`. File formats, HTTP clients, the agent state machine and the
//! CLI live in the `wakeprobe` crate.
//!
//! Module map:
//!
//! - [`field`]: gridded snapshots, time statistics, profile extraction and
//!   cylinder detection.
//! - [`metrics`]: displacement/momentum thickness, profile-matching errors,
//!   the composite objective, probe sweeps and extremum selection.
//! - [`surrogate`]: the closed-form tandem-wake model, frame rasterization and
//!   the `FLOWSNP1` snapshot codec.
//! - [`coverage`]: spacing windows and coverage bookkeeping for the planner.
//! - [`discovery`]: per-spacing optima, linear and two-segment fits, model
//!   selection, divergence tables and landscape grids.
//! - [`latent`]: toy-scale total-correlation VAE and EDM diffusion mathematics
//!   with hand-written reverse-mode gradients.

#![cfg_attr(not(feature = "std"), no_std)]
// Negated comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod coverage;
pub mod discovery;
pub mod field;
pub mod latent;
pub mod metrics;
pub mod rng;
pub mod special;
pub mod surrogate;

pub use field::{FlowSnapshot, GeometryEstimate, Grid, MeanField, VelocityProfile};
pub use metrics::{MetricMode, ProbeMetrics, ProbeResult, SweepSpec};
