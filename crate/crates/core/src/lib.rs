//! Probabilistic dense correspondence: hierarchical match densities over
//! small local supports, composed coarse to fine into flow or stereo fields
//! with per-pixel confidence.

pub mod density;
pub mod error;
pub mod features;
pub mod field;
pub mod matcher;
pub mod propagation;
pub mod reliability;
pub mod synth;
pub mod toolkit;

pub use density::{
    compose_full_density, compose_point_estimates, confidence_map, d2v, kl_loss, log_likelihood,
    select_wstar, v2d, FullDensity, MatchDensity, Support,
};
pub use error::{Hd3Error, Result};
pub use field::{downsample_field, upsample_field, warp_backward, FieldKind, Mask, MotionField, ScalarImage};
pub use matcher::{match_pair, DisparitySign, MatchConfig, MatchMode, MatchOutput};
