//! Grid types and the pyramid operators.
//!
//! Fields follow the align-corners-false convention: pixel `x` of a coarse
//! grid sits at coordinate `2x + 0.5` of the next finer grid. Upsampling
//! (`upsample_field`) is bilinear with edge clamping and doubles vector
//! magnitudes; downsampling divides them by the factor.

use crate::error::{check_same_size, Hd3Error, Result};

/// Whether a motion field is a 1D stereo field or a 2D flow field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldKind {
    /// Horizontal displacement only; the vertical component is always 0.
    Stereo,
    /// Full 2D displacement.
    Flow,
}

impl FieldKind {
    pub fn dim(self) -> usize {
        match self {
            FieldKind::Stereo => 1,
            FieldKind::Flow => 2,
        }
    }
}

/// Per-pixel displacement vectors with a validity mask.
///
/// Vectors are stored in pixels of the field's own resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    width: usize,
    height: usize,
    kind: FieldKind,
    vectors: Vec<[f64; 2]>,
    valid: Vec<bool>,
}

impl MotionField {
    pub fn zeros(width: usize, height: usize, kind: FieldKind) -> Self {
        Self {
            width,
            height,
            kind,
            vectors: vec![[0.0; 2]; width * height],
            valid: vec![true; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, kind: FieldKind, v: [f64; 2]) -> Self {
        let mut f = Self::zeros(width, height, kind);
        for y in 0..height {
            for x in 0..width {
                f.set(x, y, v);
            }
        }
        f
    }

    /// All pixels invalid, vectors zero.
    pub fn invalid(width: usize, height: usize, kind: FieldKind) -> Self {
        Self {
            width,
            height,
            kind,
            vectors: vec![[0.0; 2]; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn from_fn<F>(width: usize, height: usize, kind: FieldKind, mut f: F) -> Self
    where
        F: FnMut(usize, usize) -> Option<[f64; 2]>,
    {
        let mut out = Self::invalid(width, height, kind);
        for y in 0..height {
            for x in 0..width {
                if let Some(v) = f(x, y) {
                    out.set(x, y, v);
                }
            }
        }
        out
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

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    #[inline]
    fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    /// Vector at `(x, y)`, regardless of validity (invalid pixels hold zero).
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 2] {
        self.vectors[self.idx(x, y)]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[self.idx(x, y)]
    }

    /// Valid vector at `(x, y)`.
    #[inline]
    pub fn value(&self, x: usize, y: usize) -> Option<[f64; 2]> {
        let i = self.idx(x, y);
        self.valid[i].then(|| self.vectors[i])
    }

    /// Stores a valid vector. Stereo fields drop the vertical component.
    pub fn set(&mut self, x: usize, y: usize, v: [f64; 2]) {
        let i = self.idx(x, y);
        self.vectors[i] = match self.kind {
            FieldKind::Stereo => [v[0], 0.0],
            FieldKind::Flow => v,
        };
        self.valid[i] = true;
    }

    pub fn set_invalid(&mut self, x: usize, y: usize) {
        let i = self.idx(x, y);
        self.vectors[i] = [0.0; 2];
        self.valid[i] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|v| *v)
    }

    pub fn vectors(&self) -> &[[f64; 2]] {
        &self.vectors
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    /// Pointwise `self + other`; invalid where either is invalid.
    pub fn add(&self, other: &MotionField) -> Result<MotionField> {
        self.zip_with(other, |a, b| [a[0] + b[0], a[1] + b[1]])
    }

    /// Pointwise `self - other`; invalid where either is invalid.
    pub fn sub(&self, other: &MotionField) -> Result<MotionField> {
        self.zip_with(other, |a, b| [a[0] - b[0], a[1] - b[1]])
    }

    pub fn scale(&self, s: f64) -> MotionField {
        let mut out = self.clone();
        for v in out.vectors.iter_mut() {
            v[0] *= s;
            v[1] *= s;
        }
        out
    }

    fn zip_with<F>(&self, other: &MotionField, op: F) -> Result<MotionField>
    where
        F: Fn([f64; 2], [f64; 2]) -> [f64; 2],
    {
        check_same_size(self.size(), other.size())?;
        let kind = if self.kind == FieldKind::Flow || other.kind == FieldKind::Flow {
            FieldKind::Flow
        } else {
            FieldKind::Stereo
        };
        Ok(MotionField::from_fn(self.width, self.height, kind, |x, y| {
            match (self.value(x, y), other.value(x, y)) {
                (Some(a), Some(b)) => Some(op(a, b)),
                _ => None,
            }
        }))
    }
}

/// Multi-channel raster of real samples, row-major and channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ScalarImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Hd3Error::InvalidParameter("image needs at least one channel".into()));
        }
        if data.len() != width * height * channels {
            return Err(Hd3Error::InvalidParameter(format!(
                "image buffer holds {} samples, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Hd3Error::InvalidParameter("image samples must be finite".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Single-channel image from a per-pixel function.
    pub fn from_fn<F: FnMut(usize, usize) -> f64>(width: usize, height: usize, mut f: F) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Luma for 3/4-channel images, channel average otherwise.
    pub fn to_gray(&self) -> ScalarImage {
        if self.channels == 1 {
            return self.clone();
        }
        ScalarImage::from_fn(self.width, self.height, |x, y| {
            if self.channels >= 3 {
                0.299 * self.get(x, y, 0) + 0.587 * self.get(x, y, 1) + 0.114 * self.get(x, y, 2)
            } else {
                (0..self.channels).map(|c| self.get(x, y, c)).sum::<f64>() / self.channels as f64
            }
        })
    }
}

/// Per-pixel boolean mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn from_fn<F: FnMut(usize, usize) -> bool>(width: usize, height: usize, mut f: F) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
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

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn complement(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }
}

/// Up to four bilinear taps `(x, y, weight)`; zero-weight taps are dropped.
#[derive(Debug, Clone, Copy)]
pub struct Taps {
    taps: [(usize, usize, f64); 4],
    len: usize,
}

impl Taps {
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.taps[..self.len].iter().copied()
    }
}

/// Bilinear taps for a sample at `(px, py)`.
///
/// Returns `None` when the position lies outside `[0, w-1] x [0, h-1]`.
#[inline]
pub fn bilinear_taps(px: f64, py: f64, width: usize, height: usize) -> Option<Taps> {
    if !(px >= 0.0 && py >= 0.0 && px <= (width - 1) as f64 && py <= (height - 1) as f64) {
        return None;
    }
    let x0 = px.floor();
    let y0 = py.floor();
    let fx = px - x0;
    let fy = py - y0;
    let (x0, y0) = (x0 as usize, y0 as usize);
    let mut taps = Taps {
        taps: [(0, 0, 0.0); 4],
        len: 0,
    };
    let corners = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ];
    for c in corners {
        if c.2 != 0.0 {
            taps.taps[taps.len] = c;
            taps.len += 1;
        }
    }
    Some(taps)
}

/// Bilinear sample of a valid field vector at `(px, py)`; `None` if out of
/// bounds or any contributing pixel is invalid.
pub fn sample_field(f: &MotionField, px: f64, py: f64) -> Option<[f64; 2]> {
    let taps = bilinear_taps(px, py, f.width, f.height)?;
    let mut acc = [0.0; 2];
    for (x, y, w) in taps.iter() {
        let v = f.value(x, y)?;
        acc[0] += w * v[0];
        acc[1] += w * v[1];
    }
    Some(acc)
}

/// ×2 upsampling: bilinear, align-corners-false, edge-clamped; magnitudes doubled.
pub fn upsample_field(f: &MotionField) -> MotionField {
    let (w, h) = f.size();
    let (ow, oh) = (2 * w, 2 * h);
    let src_coord = |o: usize, n: usize| ((o as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, (n - 1) as f64);
    MotionField::from_fn(ow, oh, f.kind, |x, y| {
        let v = sample_field(f, src_coord(x, w), src_coord(y, h))?;
        Some([2.0 * v[0], 2.0 * v[1]])
    })
}

/// Downsampling by a power-of-two factor.
///
/// Fully valid (dense) fields are resampled bilinearly at matched phase;
/// fields with any invalid pixel (sparse) are average-pooled over valid
/// pixels, a pooled pixel being valid iff its window has a valid source.
pub fn downsample_field(f: &MotionField, factor: usize) -> Result<MotionField> {
    check_factor(f.width, f.height, factor)?;
    if f.all_valid() {
        Ok(downsample_bilinear(f, factor))
    } else {
        Ok(downsample_pooled(f, factor))
    }
}

fn check_factor(width: usize, height: usize, factor: usize) -> Result<()> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(Hd3Error::BadFactor(factor));
    }
    if !width.is_multiple_of(factor) || !height.is_multiple_of(factor) {
        return Err(Hd3Error::NotDivisible {
            factor,
            width,
            height,
        });
    }
    Ok(())
}

fn downsample_bilinear(f: &MotionField, factor: usize) -> MotionField {
    let (w, h) = f.size();
    let k = factor as f64;
    let src_coord = |o: usize, n: usize| ((o as f64 + 0.5) * k - 0.5).clamp(0.0, (n - 1) as f64);
    MotionField::from_fn(w / factor, h / factor, f.kind, |x, y| {
        let v = sample_field(f, src_coord(x, w), src_coord(y, h))?;
        Some([v[0] / k, v[1] / k])
    })
}

fn downsample_pooled(f: &MotionField, factor: usize) -> MotionField {
    let k = factor as f64;
    MotionField::from_fn(f.width / factor, f.height / factor, f.kind, |x, y| {
        let mut sum = [0.0; 2];
        let mut n = 0usize;
        for sy in y * factor..(y + 1) * factor {
            for sx in x * factor..(x + 1) * factor {
                if let Some(v) = f.value(sx, sy) {
                    sum[0] += v[0];
                    sum[1] += v[1];
                    n += 1;
                }
            }
        }
        (n > 0).then(|| {
            let n = n as f64;
            [sum[0] / n / k, sum[1] / n / k]
        })
    })
}

/// Samples `img` at `x + f(x)`. Out-of-bounds samples and invalid field
/// pixels are zero-filled and flagged invalid in the returned mask.
pub fn warp_backward(img: &ScalarImage, f: &MotionField) -> Result<(ScalarImage, Mask)> {
    check_same_size(img.size(), f.size())?;
    let (w, h) = img.size();
    let c = img.channels();
    let mut out = ScalarImage::filled(w, h, c, 0.0);
    let mut mask = Mask::new(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let Some(v) = f.value(x, y) else { continue };
            let Some(taps) = bilinear_taps(x as f64 + v[0], y as f64 + v[1], w, h) else {
                continue;
            };
            for ch in 0..c {
                let s: f64 = taps.iter().map(|(tx, ty, wt)| wt * img.get(tx, ty, ch)).sum();
                out.set(x, y, ch, s);
            }
            mask.set(x, y, true);
        }
    }
    Ok((out, mask))
}
