//! Discrete match densities and the conversions between them and point
//! estimates.
//!
//! A density lives on an integer support of radius `r`: a `(2r+1)²` grid of
//! displacements for flow or a `(2r+1)` horizontal line for stereo. Support
//! cells are ordered row-major (vertical offset outer, horizontal inner).
//!
//! * [`v2d`] splats a real displacement onto the four (two for stereo)
//!   surrounding integer cells with bilinear weights.
//! * [`select_wstar`] finds the 2×2 (2×1) window holding the most mass.
//! * [`d2v`] takes the expectation of the mass retained in that window.

mod full;

pub use full::{
    compose_full_density, compose_full_density_with_budget, log_likelihood, Atom, FullDensity,
    DEFAULT_PATH_BUDGET,
};

use crate::error::{check_same_size, Hd3Error, Result};
use crate::field::{upsample_field, FieldKind, MotionField, ScalarImage};

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Integer support of a match density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Support {
    kind: FieldKind,
    radius: i32,
}

impl Support {
    pub fn new(kind: FieldKind, radius: i32) -> Result<Self> {
        if radius < 1 {
            return Err(Hd3Error::InvalidParameter(format!(
                "support radius must be at least 1, got {radius}"
            )));
        }
        Ok(Self { kind, radius })
    }

    pub fn flow(radius: i32) -> Self {
        Self::new(FieldKind::Flow, radius).expect("radius must be >= 1")
    }

    pub fn stereo(radius: i32) -> Self {
        Self::new(FieldKind::Stereo, radius).expect("radius must be >= 1")
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn radius(&self) -> i32 {
        self.radius
    }

    fn side(&self) -> usize {
        (2 * self.radius + 1) as usize
    }

    /// Number of support cells.
    pub fn len(&self) -> usize {
        match self.kind {
            FieldKind::Flow => self.side() * self.side(),
            FieldKind::Stereo => self.side(),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Displacement of cell `k`.
    #[inline]
    pub fn cell(&self, k: usize) -> [i32; 2] {
        let s = self.side();
        match self.kind {
            FieldKind::Flow => [(k % s) as i32 - self.radius, (k / s) as i32 - self.radius],
            FieldKind::Stereo => [k as i32 - self.radius, 0],
        }
    }

    /// Index of displacement `d`, if it lies on the support.
    #[inline]
    pub fn index_of(&self, d: [i32; 2]) -> Option<usize> {
        let r = self.radius;
        if d[0] < -r || d[0] > r {
            return None;
        }
        let ix = (d[0] + r) as usize;
        match self.kind {
            FieldKind::Flow => {
                if d[1] < -r || d[1] > r {
                    return None;
                }
                Some((d[1] + r) as usize * self.side() + ix)
            }
            FieldKind::Stereo => (d[1] == 0).then_some(ix),
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = [i32; 2]> + '_ {
        (0..self.len()).map(move |k| self.cell(k))
    }

    /// Whether a real displacement lies in the support's convex hull.
    pub fn contains(&self, v: [f64; 2]) -> bool {
        let r = self.radius as f64;
        let in_range = |t: f64| t.is_finite() && (-r..=r).contains(&t);
        match self.kind {
            FieldKind::Flow => in_range(v[0]) && in_range(v[1]),
            FieldKind::Stereo => in_range(v[0]),
        }
    }

    /// All candidate windows in row-major anchor order.
    pub fn windows(&self) -> impl Iterator<Item = SupportWindow> + '_ {
        let r = self.radius;
        let kind = self.kind;
        let rows: Vec<i32> = match kind {
            FieldKind::Flow => (-r..r).collect(),
            FieldKind::Stereo => vec![0],
        };
        rows.into_iter().flat_map(move |ay| {
            (-r..r).map(move |ax| SupportWindow {
                anchor: [ax, ay],
                kind,
            })
        })
    }
}

/// A 2×2 (flow) or 2×1 (stereo) window of support cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SupportWindow {
    /// Minimum corner of the window.
    pub anchor: [i32; 2],
    pub kind: FieldKind,
}

impl SupportWindow {
    pub fn cells(&self) -> impl Iterator<Item = [i32; 2]> {
        let [ax, ay] = self.anchor;
        let rows = match self.kind {
            FieldKind::Flow => 2,
            FieldKind::Stereo => 1,
        };
        (0..rows).flat_map(move |dy| (0..2).map(move |dx| [ax + dx, ay + dy]))
    }
}

/// Bilinear splat of a real displacement onto its containing integer cells.
///
/// Cells come out row-major with anchor `floor(v)`; zero-weight cells are
/// included so callers can rely on a fixed layout. Stereo splats ignore
/// `v[1]` and produce two cells.
#[derive(Debug, Clone, Copy)]
pub struct Splat {
    cells: [([i32; 2], f64); 4],
    len: usize,
}

impl Splat {
    pub fn new(v: [f64; 2], kind: FieldKind) -> Self {
        let ax = v[0].floor();
        let tx = v[0] - ax;
        let ax = ax as i32;
        let mut cells = [([0, 0], 0.0); 4];
        match kind {
            FieldKind::Stereo => {
                cells[0] = ([ax, 0], 1.0 - tx);
                cells[1] = ([ax + 1, 0], tx);
                Self { cells, len: 2 }
            }
            FieldKind::Flow => {
                let ay = v[1].floor();
                let ty = v[1] - ay;
                let ay = ay as i32;
                cells[0] = ([ax, ay], (1.0 - tx) * (1.0 - ty));
                cells[1] = ([ax + 1, ay], tx * (1.0 - ty));
                cells[2] = ([ax, ay + 1], (1.0 - tx) * ty);
                cells[3] = ([ax + 1, ay + 1], tx * ty);
                Self { cells, len: 4 }
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = ([i32; 2], f64)> + '_ {
        self.cells[..self.len].iter().copied()
    }
}

/// Per-pixel discrete probability mass over a bounded support.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchDensity {
    width: usize,
    height: usize,
    support: Support,
    mass: Vec<f64>,
    valid: Vec<bool>,
}

impl MatchDensity {
    /// All pixels invalid with zero mass.
    pub fn empty(width: usize, height: usize, support: Support) -> Self {
        Self {
            width,
            height,
            support,
            mass: vec![0.0; width * height * support.len()],
            valid: vec![false; width * height],
        }
    }

    /// Uniform mass at every pixel.
    pub fn uniform(width: usize, height: usize, support: Support) -> Self {
        let n = support.len();
        Self {
            width,
            height,
            support,
            mass: vec![1.0 / n as f64; width * height * n],
            valid: vec![true; width * height],
        }
    }

    /// Builds a density pixel by pixel; `None` marks a pixel invalid.
    ///
    /// Returned slices must have `support.len()` entries; they are stored
    /// as given (no renormalization).
    pub fn from_fn<F>(width: usize, height: usize, support: Support, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> Option<Vec<f64>>,
    {
        let mut out = Self::empty(width, height, support);
        for y in 0..height {
            for x in 0..width {
                if let Some(m) = f(x, y) {
                    out.set_pixel(x, y, &m)?;
                }
            }
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

    pub fn support(&self) -> Support {
        self.support
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    /// Mass vector of pixel `(x, y)` in support-cell order.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let n = self.support.len();
        let i = (y * self.width + x) * n;
        &self.mass[i..i + n]
    }

    /// Mass at displacement `d` (zero off-support).
    pub fn mass_at(&self, x: usize, y: usize, d: [i32; 2]) -> f64 {
        self.support
            .index_of(d)
            .map(|k| self.pixel(x, y)[k])
            .unwrap_or(0.0)
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, mass: &[f64]) -> Result<()> {
        let n = self.support.len();
        if mass.len() != n {
            return Err(Hd3Error::InvalidParameter(format!(
                "pixel mass has {} entries, support has {n}",
                mass.len()
            )));
        }
        if mass.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Hd3Error::InvalidParameter(
                "mass entries must lie in [0, 1]".into(),
            ));
        }
        let i = (y * self.width + x) * n;
        self.mass[i..i + n].copy_from_slice(mass);
        self.valid[y * self.width + x] = true;
        Ok(())
    }

    pub fn set_invalid(&mut self, x: usize, y: usize) {
        let n = self.support.len();
        let i = (y * self.width + x) * n;
        self.mass[i..i + n].iter_mut().for_each(|m| *m = 0.0);
        self.valid[y * self.width + x] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Splats each valid displacement onto the support with bilinear weights.
///
/// Pixels whose displacement leaves the support's hull are invalid.
pub fn v2d(f: &MotionField, support: Support) -> MatchDensity {
    let (w, h) = f.size();
    let mut out = MatchDensity::empty(w, h, support);
    let n = support.len();
    let r = support.radius();
    for y in 0..h {
        for x in 0..w {
            let Some(v) = f.value(x, y) else { continue };
            if !support.contains(v) {
                continue;
            }
            // Keep the window inside the support when v sits on its upper edge.
            let snap = |t: f64| if t == r as f64 { t - 1.0 } else { t.floor() };
            let base = [snap(v[0]), snap(v[1])];
            let local = [v[0] - base[0], v[1] - base[1]];
            let i = (y * w + x) * n;
            for (d, wt) in Splat::new(local, support.kind()).iter() {
                let cell = [d[0] + base[0] as i32, d[1] + base[1] as i32];
                if let Some(k) = support.index_of(cell) {
                    out.mass[i + k] = wt;
                }
            }
            out.valid[y * w + x] = true;
        }
    }
    out
}

fn best_window(mass: &[f64], support: Support) -> (SupportWindow, f64) {
    let mut best: Option<(SupportWindow, f64)> = None;
    for win in support.windows() {
        let total: f64 = win
            .cells()
            .map(|c| mass[support.index_of(c).expect("window inside support")])
            .sum();
        if best.is_none_or(|(_, b)| total > b) {
            best = Some((win, total));
        }
    }
    best.expect("support has at least one window")
}

/// Per-pixel window with maximal total mass; ties go to the smallest anchor
/// in row-major order. Invalid pixels get that tie-break window too.
pub fn select_wstar(p: &MatchDensity) -> Vec<SupportWindow> {
    let (w, h) = p.size();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            out.push(best_window(p.pixel(x, y), p.support).0);
        }
    }
    out
}

/// Local expectation over W*: per pixel, the mean displacement of the mass
/// retained in the best window. Pixels with no retained mass are invalid.
pub fn d2v(p: &MatchDensity) -> MotionField {
    let support = p.support;
    MotionField::from_fn(p.width, p.height, support.kind(), |x, y| {
        if !p.is_valid(x, y) {
            return None;
        }
        let mass = p.pixel(x, y);
        let (win, total) = best_window(mass, support);
        if total <= 0.0 {
            return None;
        }
        let mut e = [0.0; 2];
        for c in win.cells() {
            let m = mass[support.index_of(c).expect("window inside support")];
            e[0] += m * c[0] as f64;
            e[1] += m * c[1] as f64;
        }
        Some([e[0] / total, e[1] / total])
    })
}

/// Mean over jointly valid pixels of `KL(p_gt || p_res)` in nats.
///
/// `p_res` is floored at [`PROB_FLOOR`]; cells with zero ground-truth mass
/// contribute nothing. Returns 0 when no pixel is valid in both.
pub fn kl_loss(p_gt: &MatchDensity, p_res: &MatchDensity) -> Result<f64> {
    if p_gt.support != p_res.support {
        return Err(Hd3Error::SupportMismatch);
    }
    check_same_size(p_gt.size(), p_res.size())?;
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..p_gt.height {
        for x in 0..p_gt.width {
            if !(p_gt.is_valid(x, y) && p_res.is_valid(x, y)) {
                continue;
            }
            total += kl_pixel(p_gt.pixel(x, y), p_res.pixel(x, y));
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// KL divergence between two mass vectors on the same support.
pub fn kl_pixel(gt: &[f64], res: &[f64]) -> f64 {
    gt.iter()
        .zip(res)
        .filter(|(g, _)| **g > 0.0)
        .map(|(g, r)| g * (g.ln() - r.max(PROB_FLOOR).ln()))
        .sum()
}

/// Mass inside W* per pixel (0 for invalid pixels). Uncertainty is `1 - confidence`.
pub fn confidence_map(p: &MatchDensity) -> ScalarImage {
    ScalarImage::from_fn(p.width, p.height, |x, y| {
        if !p.is_valid(x, y) {
            return 0.0;
        }
        best_window(p.pixel(x, y), p.support).1.clamp(0.0, 1.0)
    })
}

/// Recovers a motion field from coarse-to-fine residuals by iterated
/// upsample-and-add. `residuals[0]` is the coarsest level.
pub fn compose_point_estimates(residuals: &[MotionField]) -> Result<MotionField> {
    let (first, rest) = residuals
        .split_first()
        .ok_or_else(|| Hd3Error::InvalidParameter("no residual levels".into()))?;
    let mut running = first.clone();
    for g in rest {
        let up = upsample_field(&running);
        check_same_size(up.size(), g.size())?;
        running = up.add(g)?;
    }
    Ok(running)
}
