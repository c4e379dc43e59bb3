//! End-point error and outlier-rate metrics.

use std::fmt;

use crate::error::{check_same_size, Hd3Error, Result};
use crate::field::MotionField;

/// Absolute outlier threshold in pixels.
pub const OUTLIER_ABS: f64 = 3.0;
/// Relative outlier threshold (fraction of ground-truth magnitude).
pub const OUTLIER_REL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Mean end-point error in pixels.
    pub epe: f64,
    /// Fraction of outlier pixels in `[0, 1]`.
    pub fl: f64,
    /// Mean ground-truth log-likelihood in nats, when a density was scored.
    pub avg_loglik: Option<f64>,
    /// Number of scored pixels.
    pub count: usize,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epe={:.3} fl={:.3}", self.epe, self.fl)?;
        if let Some(ll) = self.avg_loglik {
            write!(f, " loglik={ll:.3}")?;
        }
        write!(f, " count={}", self.count)
    }
}

/// Error above both 3 px and 5% of the ground-truth magnitude.
pub fn is_outlier(est: [f64; 2], gt: [f64; 2]) -> bool {
    let err = (est[0] - gt[0]).hypot(est[1] - gt[1]);
    err > OUTLIER_ABS && err > OUTLIER_REL * gt[0].hypot(gt[1])
}

/// EPE and Fl over pixels valid in both fields.
pub fn compute_epe_fl(est: &MotionField, gt: &MotionField) -> Result<EvalReport> {
    check_same_size(gt.size(), est.size())?;
    let mut sum = 0.0;
    let mut outliers = 0usize;
    let mut count = 0usize;
    for ((e, g), (ve, vg)) in est
        .vectors()
        .iter()
        .zip(gt.vectors())
        .zip(est.validity().iter().zip(gt.validity()))
    {
        if !(*ve && *vg) {
            continue;
        }
        sum += (e[0] - g[0]).hypot(e[1] - g[1]);
        outliers += usize::from(is_outlier(*e, *g));
        count += 1;
    }
    if count == 0 {
        return Err(Hd3Error::EmptyRegion);
    }
    Ok(EvalReport {
        epe: sum / count as f64,
        fl: outliers as f64 / count as f64,
        avg_loglik: None,
        count,
    })
}
