//! Inlier/outlier classification of dense estimates, either from the
//! match-density uncertainty or from a forward-backward consistency check,
//! and IoU/accuracy scoring of such classifications.

use std::fmt;

use crate::error::{check_same_size, Hd3Error, Result};
use crate::field::{sample_field, Mask, MotionField, ScalarImage};
use crate::toolkit::metrics::is_outlier;

/// Absolute tolerance of the consistency check, in pixels.
pub const FB_ALPHA: f64 = 3.0;
/// Relative tolerance of the consistency check.
pub const FB_BETA: f64 = 0.05;
/// Default uncertainty threshold.
pub const DEFAULT_SIGMA: f64 = 0.3;

/// Outlier where `1 - confidence > sigma`.
pub fn classify_by_uncertainty(confidence: &ScalarImage, sigma: f64) -> Result<Mask> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Hd3Error::InvalidParameter(format!(
            "sigma must lie in (0, 1), got {sigma}"
        )));
    }
    Ok(Mask::from_fn(confidence.width(), confidence.height(), |x, y| {
        1.0 - confidence.get(x, y, 0) > sigma
    }))
}

/// Outlier where the backward field, sampled at the forward target, fails
/// to cancel the forward vector:
/// `|fw + bw(x + fw)| > max(FB_ALPHA, FB_BETA * (|fw| + |bw(x + fw)|))`.
/// Pixels whose target cannot be sampled are outliers.
pub fn classify_by_fb_consistency(fw: &MotionField, bw: &MotionField) -> Result<Mask> {
    check_same_size(fw.size(), bw.size())?;
    Ok(Mask::from_fn(fw.width(), fw.height(), |x, y| {
        let Some(f) = fw.value(x, y) else { return true };
        let Some(b) = sample_field(bw, x as f64 + f[0], y as f64 + f[1]) else {
            return true;
        };
        let diff = (f[0] + b[0]).hypot(f[1] + b[1]);
        let scale = f[0].hypot(f[1]) + b[0].hypot(b[1]);
        diff > FB_ALPHA.max(FB_BETA * scale)
    }))
}

/// IoU and accuracy (percent) for one class in one region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScore {
    pub iou: f64,
    pub acc: f64,
}

/// Scores for the outlier class, the inlier class and their mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionScores {
    pub outlier: ClassScore,
    pub inlier: ClassScore,
    pub mean: ClassScore,
}

/// Classification quality in the non-occluded (`noc`) and full (`all`) regions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierReport {
    pub noc: RegionScores,
    pub all: RegionScores,
    /// Uncertainty threshold used, if the prediction came from one.
    pub sigma: Option<f64>,
}

impl OutlierReport {
    /// One `key=value` line per metric.
    pub fn key_values(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        if let Some(s) = self.sigma {
            out.push(("sigma".to_string(), s));
        }
        for (region, scores) in [("noc", &self.noc), ("all", &self.all)] {
            for (class, s) in [
                ("outlier", scores.outlier),
                ("inlier", scores.inlier),
                ("mean", scores.mean),
            ] {
                out.push((format!("{region}.{class}.iou"), s.iou));
                out.push((format!("{region}.{class}.acc"), s.acc));
            }
        }
        out
    }
}

impl fmt::Display for OutlierReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(s) = self.sigma {
            writeln!(f, "sigma = {s:.3}")?;
        }
        writeln!(f, "{:<8} | {:>6} {:>6} | {:>6} {:>6}", "class", "Noc", "", "All", "")?;
        writeln!(f, "{:<8} | {:>6} {:>6} | {:>6} {:>6}", "", "IoU", "Acc", "IoU", "Acc")?;
        for (name, noc, all) in [
            ("outlier", self.noc.outlier, self.all.outlier),
            ("inlier", self.noc.inlier, self.all.inlier),
            ("mean", self.noc.mean, self.all.mean),
        ] {
            writeln!(
                f,
                "{:<8} | {:>6.1} {:>6.1} | {:>6.1} {:>6.1}",
                name, noc.iou, noc.acc, all.iou, all.acc
            )?;
        }
        Ok(())
    }
}

#[derive(Default, Clone, Copy)]
struct Confusion {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Confusion {
    fn score(&self) -> ClassScore {
        // A class absent from both prediction and truth counts as perfect.
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                100.0
            } else {
                100.0 * num as f64 / den as f64
            }
        };
        ClassScore {
            iou: ratio(self.tp, self.tp + self.fp + self.fn_),
            acc: ratio(self.tp, self.tp + self.fn_),
        }
    }
}

fn score_region<I>(pairs: I) -> Result<RegionScores>
where
    I: Iterator<Item = (bool, bool)>,
{
    let mut out = Confusion::default();
    let mut inl = Confusion::default();
    let mut n = 0usize;
    for (pred, truth) in pairs {
        n += 1;
        match (pred, truth) {
            (true, true) => out.tp += 1,
            (true, false) => {
                out.fp += 1;
                inl.fn_ += 1;
            }
            (false, true) => {
                out.fn_ += 1;
                inl.fp += 1;
            }
            (false, false) => inl.tp += 1,
        }
    }
    if n == 0 {
        return Err(Hd3Error::EmptyRegion);
    }
    let (o, i) = (out.score(), inl.score());
    Ok(RegionScores {
        outlier: o,
        inlier: i,
        mean: ClassScore {
            iou: 0.5 * (o.iou + i.iou),
            acc: 0.5 * (o.acc + i.acc),
        },
    })
}

/// Scores predicted outlier labels against true labels.
///
/// `region` limits the "All" evaluation (e.g. to pixels with ground truth);
/// "Noc" additionally requires `noc`.
pub fn score_labels(pred: &Mask, truth: &Mask, region: &Mask, noc: &Mask) -> Result<OutlierReport> {
    check_same_size(pred.size(), truth.size())?;
    check_same_size(pred.size(), region.size())?;
    check_same_size(pred.size(), noc.size())?;
    let (w, h) = pred.size();
    let coords = || (0..h).flat_map(move |y| (0..w).map(move |x| (x, y)));
    let all = score_region(
        coords()
            .filter(|&(x, y)| region.get(x, y))
            .map(|(x, y)| (pred.get(x, y), truth.get(x, y))),
    )?;
    let noc = score_region(
        coords()
            .filter(|&(x, y)| region.get(x, y) && noc.get(x, y))
            .map(|(x, y)| (pred.get(x, y), truth.get(x, y))),
    )?;
    Ok(OutlierReport {
        noc,
        all,
        sigma: None,
    })
}

/// True outliers: estimate error above 3 px and above 5% of the ground-truth
/// magnitude. Only pixels valid in both fields are labelled (mask = region).
pub fn true_outliers(gt: &MotionField, est: &MotionField) -> Result<(Mask, Mask)> {
    check_same_size(gt.size(), est.size())?;
    let (w, h) = gt.size();
    let region = Mask::from_fn(w, h, |x, y| gt.is_valid(x, y) && est.is_valid(x, y));
    let truth = Mask::from_fn(w, h, |x, y| match (gt.value(x, y), est.value(x, y)) {
        (Some(g), Some(e)) => is_outlier(e, g),
        _ => false,
    });
    Ok((truth, region))
}

/// Scores a predicted outlier mask against the errors of `est_flow`.
pub fn score_classification(
    pred: &Mask,
    gt_flow: &MotionField,
    est_flow: &MotionField,
    noc_mask: &Mask,
) -> Result<OutlierReport> {
    let (truth, region) = true_outliers(gt_flow, est_flow)?;
    score_labels(pred, &truth, &region, noc_mask)
}
