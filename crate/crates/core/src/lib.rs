//! Residual trajectory diffusion planning on synthetic 2D driving scenes.
//!
//! The planner predicts min-max normalized residuals against a
//! constant-velocity inertial reference with a small diffusion model,
//! perturbs that reference to obtain multiple hypotheses, and picks one
//! candidate with a learned per-metric scorer. Scores follow the PDMS and
//! EPDMS aggregation rules over closed-form toy sub-metrics.

pub mod diffusion;
pub mod error;
pub mod geom;
pub mod harness;
pub mod trajcore;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod ranker;
pub mod scenegen;

pub use error::{Error, Result};
