//! Label propagation by forward splatting of class probabilities, guided
//! either by a match density or by a point-estimate field.

use crate::density::{MatchDensity, Splat};
use crate::error::{check_same_size, Hd3Error, Result};
use crate::field::MotionField;
use crate::toolkit::image::LabelImage;

/// Per-pixel class distributions. Unknown pixels hold the uniform vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelProbMap {
    width: usize,
    height: usize,
    classes: usize,
    probs: Vec<f64>,
    known: Vec<bool>,
}

impl LabelProbMap {
    /// Every pixel unknown.
    pub fn unknown(width: usize, height: usize, classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Hd3Error::InvalidParameter("need at least one class".into()));
        }
        Ok(Self {
            width,
            height,
            classes,
            probs: vec![1.0 / classes as f64; width * height * classes],
            known: vec![false; width * height],
        })
    }

    /// One-hot vectors from hard labels; unlabeled pixels are unknown.
    pub fn from_labels(labels: &LabelImage, classes: usize) -> Result<Self> {
        let mut out = Self::unknown(labels.width, labels.height, classes)?;
        for (i, l) in labels.labels.iter().enumerate() {
            let Some(l) = *l else { continue };
            let l = l as usize;
            if l >= classes {
                return Err(Hd3Error::InvalidParameter(format!(
                    "label {l} outside {classes} classes"
                )));
            }
            let p = &mut out.probs[i * classes..(i + 1) * classes];
            p.fill(0.0);
            p[l] = 1.0;
            out.known[i] = true;
        }
        Ok(out)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn probs(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.classes;
        &self.probs[i..i + self.classes]
    }

    pub fn is_known(&self, x: usize, y: usize) -> bool {
        self.known[y * self.width + x]
    }

    /// Most probable class per known pixel; ties go to the lower index.
    pub fn argmax(&self) -> LabelImage {
        let labels = self
            .probs
            .chunks_exact(self.classes)
            .zip(&self.known)
            .map(|(p, &known)| {
                known.then(|| {
                    let mut best = 0;
                    for (c, &v) in p.iter().enumerate() {
                        if v > p[best] {
                            best = c;
                        }
                    }
                    best as u32
                })
            })
            .collect();
        LabelImage {
            width: self.width,
            height: self.height,
            labels,
        }
    }
}

/// Correspondence used to move labels from one frame to the next.
#[derive(Debug, Clone, Copy)]
pub enum Guide<'a> {
    /// Bilinear splat around `x + f(x)`.
    Flow(&'a MotionField),
    /// Mass `p(d)` sent to `x + base(x) + d` for every support cell `d`;
    /// without `base` the targets are integer offsets.
    Density {
        density: &'a MatchDensity,
        base: Option<&'a MotionField>,
    },
}

impl Guide<'_> {
    fn size(&self) -> (usize, usize) {
        match self {
            Guide::Flow(f) => f.size(),
            Guide::Density { density, .. } => density.size(),
        }
    }
}

/// Un-normalized splat result.
#[derive(Debug, Clone)]
pub struct Accumulation {
    width: usize,
    height: usize,
    classes: usize,
    /// Class mass per target pixel.
    pub mass: Vec<f64>,
    /// Total splat weight per target pixel.
    pub weight: Vec<f64>,
    /// Class mass that left the frame.
    pub dropped: f64,
}

impl Accumulation {
    /// Normalizes each target by its received weight; targets with none
    /// become unknown.
    pub fn normalize(&self) -> LabelProbMap {
        let c = self.classes;
        let mut probs = vec![1.0 / c as f64; self.mass.len()];
        let mut known = vec![false; self.weight.len()];
        for (i, &w) in self.weight.iter().enumerate() {
            if w > 0.0 {
                for k in 0..c {
                    probs[i * c + k] = self.mass[i * c + k] / w;
                }
                known[i] = true;
            }
        }
        LabelProbMap {
            width: self.width,
            height: self.height,
            classes: c,
            probs,
            known,
        }
    }
}

/// Distributes every known source pixel's class vector along `guide`.
/// Sources are visited in row-major order, so accumulation is deterministic.
pub fn accumulate(src: &LabelProbMap, guide: Guide<'_>) -> Result<Accumulation> {
    check_same_size(src.size(), guide.size())?;
    let (w, h) = src.size();
    let c = src.classes;
    let mut acc = Accumulation {
        width: w,
        height: h,
        classes: c,
        mass: vec![0.0; w * h * c],
        weight: vec![0.0; w * h],
        dropped: 0.0,
    };
    let mut deposit = |x: usize, y: usize, d: [i32; 2], wt: f64, p: &[f64]| {
        if wt == 0.0 {
            return;
        }
        let tx = x as i64 + i64::from(d[0]);
        let ty = y as i64 + i64::from(d[1]);
        if tx < 0 || ty < 0 || tx >= w as i64 || ty >= h as i64 {
            acc.dropped += wt * p.iter().sum::<f64>();
            return;
        }
        let t = ty as usize * w + tx as usize;
        acc.weight[t] += wt;
        for (m, &v) in acc.mass[t * c..(t + 1) * c].iter_mut().zip(p) {
            *m += wt * v;
        }
    };
    for y in 0..h {
        for x in 0..w {
            if !src.is_known(x, y) {
                continue;
            }
            let p = src.probs(x, y);
            match guide {
                Guide::Flow(f) => {
                    let Some(v) = f.value(x, y) else { continue };
                    for (d, wt) in Splat::new(v, f.kind()).iter() {
                        deposit(x, y, d, wt, p);
                    }
                }
                Guide::Density { density, base } => {
                    if !density.is_valid(x, y) {
                        continue;
                    }
                    let support = density.support();
                    let offset = match base {
                        Some(b) => match b.value(x, y) {
                            Some(v) => Some(v),
                            None => continue,
                        },
                        None => None,
                    };
                    for (k, &m) in density.pixel(x, y).iter().enumerate() {
                        let cell = support.cell(k);
                        match offset {
                            None => deposit(x, y, cell, m, p),
                            Some(o) => {
                                let v = [o[0] + f64::from(cell[0]), o[1] + f64::from(cell[1])];
                                for (d, wt) in Splat::new(v, support.kind()).iter() {
                                    deposit(x, y, d, m * wt, p);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(acc)
}

/// One propagation step: accumulate, then normalize per target pixel.
pub fn splat_forward(src: &LabelProbMap, guide: Guide<'_>) -> Result<LabelProbMap> {
    Ok(accumulate(src, guide)?.normalize())
}

/// Applies the guides in order; output `t` is frame `t + 1`.
pub fn propagate_sequence(seed: &LabelProbMap, guides: &[Guide<'_>]) -> Result<Vec<LabelProbMap>> {
    let mut out: Vec<LabelProbMap> = Vec::with_capacity(guides.len());
    for g in guides {
        let prev = out.last().unwrap_or(seed);
        let next = splat_forward(prev, *g)?;
        out.push(next);
    }
    Ok(out)
}

/// Mean per-class IoU and accuracy, in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationScore {
    pub miou: f64,
    pub macc: f64,
    /// `(class, iou, acc)` for each class present in the ground truth.
    pub per_class: Vec<(u32, f64, f64)>,
}

/// Scores hard predictions. Pixels unlabeled in `gt` or unknown in `pred`
/// are skipped; classes are averaged over those present in `gt`.
pub fn score_segmentation(pred: &LabelImage, gt: &LabelImage, classes: usize) -> Result<SegmentationScore> {
    check_same_size((gt.width, gt.height), (pred.width, pred.height))?;
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    let mut present = vec![false; classes];
    let mut any = false;
    for (p, g) in pred.labels.iter().zip(&gt.labels) {
        let Some(g) = *g else { continue };
        let g = g as usize;
        if g >= classes {
            return Err(Hd3Error::InvalidParameter(format!("label {g} outside {classes} classes")));
        }
        present[g] = true;
        let Some(p) = *p else { continue };
        any = true;
        let p = p as usize;
        if p == g {
            tp[g] += 1;
        } else {
            fn_[g] += 1;
            if p < classes {
                fp[p] += 1;
            }
        }
    }
    if !any {
        return Err(Hd3Error::EmptyRegion);
    }
    let per_class: Vec<(u32, f64, f64)> = (0..classes)
        .filter(|&k| present[k])
        .map(|k| {
            let ratio = |num: usize, den: usize| {
                if den == 0 {
                    0.0
                } else {
                    100.0 * num as f64 / den as f64
                }
            };
            (k as u32, ratio(tp[k], tp[k] + fp[k] + fn_[k]), ratio(tp[k], tp[k] + fn_[k]))
        })
        .collect();
    let n = per_class.len() as f64;
    Ok(SegmentationScore {
        miou: per_class.iter().map(|c| c.1).sum::<f64>() / n,
        macc: per_class.iter().map(|c| c.2).sum::<f64>() / n,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{v2d, Support};
    use crate::field::FieldKind;

    fn stripes(w: usize, h: usize) -> LabelImage {
        LabelImage::new(w, h, (0..w * h).map(|i| Some((i % w % 3) as u32)).collect()).unwrap()
    }

    fn shift(w: usize, h: usize, v: [f64; 2]) -> MotionField {
        MotionField::constant(w, h, FieldKind::Flow, v)
    }

    #[test]
    fn identity_splat() {
        let seed = LabelProbMap::from_labels(&stripes(6, 4), 3).unwrap();
        let zero = shift(6, 4, [0.0, 0.0]);
        assert_eq!(splat_forward(&seed, Guide::Flow(&zero)).unwrap(), seed);
        let delta = v2d(&zero, Support::flow(2));
        let g = Guide::Density {
            density: &delta,
            base: None,
        };
        assert_eq!(splat_forward(&seed, g).unwrap(), seed);
    }

    #[test]
    fn integer_shift_moves_labels() {
        let labels = stripes(6, 2);
        let seed = LabelProbMap::from_labels(&labels, 3).unwrap();
        let out = splat_forward(&seed, Guide::Flow(&shift(6, 2, [2.0, 0.0]))).unwrap();
        let hard = out.argmax();
        for y in 0..2 {
            assert_eq!(hard.get(0, y), None);
            assert_eq!(hard.get(1, y), None);
            for x in 2..6 {
                assert_eq!(hard.get(x, y), labels.get(x - 2, y));
            }
        }
        assert_eq!(out.probs(0, 0), &[1.0 / 3.0; 3]);
    }

    #[test]
    fn two_point_density_splits_and_renormalizes() {
        let labels = LabelImage::new(3, 1, vec![None, Some(1), None]).unwrap();
        let seed = LabelProbMap::from_labels(&labels, 2).unwrap();
        let support = Support::flow(1);
        let density = MatchDensity::from_fn(3, 1, support, |x, _| {
            let mut m = vec![0.0; support.len()];
            if x == 1 {
                m[support.index_of([0, 0]).unwrap()] = 0.5;
                m[support.index_of([1, 0]).unwrap()] = 0.5;
            }
            Some(m)
        })
        .unwrap();
        let acc = accumulate(&seed, Guide::Density { density: &density, base: None }).unwrap();
        assert_eq!(&acc.mass[2..6], &[0.0, 0.5, 0.0, 0.5]);
        let out = acc.normalize();
        assert!(!out.is_known(0, 0));
        assert_eq!(out.probs(1, 0), &[0.0, 1.0]);
        assert_eq!(out.probs(2, 0), &[0.0, 1.0]);
    }

    #[test]
    fn sequences_compose() {
        let labels = stripes(8, 3);
        let seed = LabelProbMap::from_labels(&labels, 3).unwrap();
        let one = shift(8, 3, [1.0, 0.0]);
        let out = propagate_sequence(&seed, &[Guide::Flow(&one), Guide::Flow(&one)]).unwrap();
        let hard = out[1].argmax();
        for x in 2..8 {
            assert_eq!(hard.get(x, 1), labels.get(x - 2, 1));
        }
        assert_eq!(hard.get(1, 1), None);
    }

    #[test]
    fn back_and_forth_leaves_one_fringe_column() {
        let labels = stripes(8, 3);
        let seed = LabelProbMap::from_labels(&labels, 3).unwrap();
        let fwd = shift(8, 3, [1.0, 0.0]);
        let back = shift(8, 3, [-1.0, 0.0]);
        let out = propagate_sequence(&seed, &[Guide::Flow(&fwd), Guide::Flow(&back)]).unwrap();
        let hard = out[1].argmax();
        for y in 0..3 {
            for x in 0..7 {
                assert_eq!(hard.get(x, y), labels.get(x, y));
            }
            // The last column left the frame on the first step.
            assert_eq!(hard.get(7, y), None);
        }
    }

    #[test]
    fn segmentation_scores() {
        let gt = LabelImage::new(4, 1, vec![Some(0), Some(0), Some(1), Some(1)]).unwrap();
        let s = score_segmentation(&gt, &gt, 2).unwrap();
        assert_eq!((s.miou, s.macc), (100.0, 100.0));
        let pred = LabelImage::new(4, 1, vec![Some(0), Some(1), Some(1), Some(1)]).unwrap();
        let s = score_segmentation(&pred, &gt, 2).unwrap();
        assert!((s.miou - 100.0 * (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(s.macc, 75.0);
        // Disjoint single-class masks.
        let gt = LabelImage::new(2, 1, vec![Some(0), None]).unwrap();
        let pred = LabelImage::new(2, 1, vec![Some(1), Some(0)]).unwrap();
        let s = score_segmentation(&pred, &gt, 2).unwrap();
        assert_eq!(s.per_class, vec![(0, 0.0, 0.0)]);
    }

    #[test]
    fn unknown_predictions_are_skipped() {
        let gt = LabelImage::new(3, 1, vec![Some(0), Some(1), Some(1)]).unwrap();
        let pred = LabelImage::new(3, 1, vec![Some(0), None, Some(1)]).unwrap();
        let s = score_segmentation(&pred, &gt, 2).unwrap();
        assert_eq!((s.miou, s.macc), (100.0, 100.0));
        let none = LabelImage::new(3, 1, vec![None; 3]).unwrap();
        assert!(matches!(score_segmentation(&none, &gt, 2), Err(Hd3Error::EmptyRegion)));
        assert!(score_segmentation(&pred, &none, 2).is_err());
    }
}
