//! Seeded synthetic test data: multi-octave value-noise textures rendered
//! as translated image pairs with known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::{FieldKind, Mask, MotionField, ScalarImage};

/// Continuous texture: sum of bilinearly interpolated random lattices at
/// spacings 1, 2, 4, ... pixels. Integer arguments hit lattice points of
/// the finest octave exactly, so integer translations are bit-exact.
#[derive(Debug, Clone)]
pub struct Texture {
    octaves: Vec<Octave>,
    margin: f64,
}

#[derive(Debug, Clone)]
struct Octave {
    spacing: f64,
    weight: f64,
    w: usize,
    h: usize,
    values: Vec<f64>,
}

impl Texture {
    /// Texture covering `[-margin, width + margin] x [-margin, height + margin]`.
    pub fn new(width: usize, height: usize, margin: usize, octaves: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ext_w = width + 2 * margin;
        let ext_h = height + 2 * margin;
        let octaves = (0..octaves.max(1))
            .map(|o| {
                let spacing = (1u64 << o) as f64;
                let w = (ext_w as f64 / spacing).ceil() as usize + 2;
                let h = (ext_h as f64 / spacing).ceil() as usize + 2;
                let values = (0..w * h).map(|_| rng.gen::<f64>()).collect();
                Octave {
                    spacing,
                    weight: 1.0,
                    w,
                    h,
                    values,
                }
            })
            .collect();
        Self {
            octaves,
            margin: margin as f64,
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let total: f64 = self.octaves.iter().map(|o| o.weight).sum();
        self.octaves
            .iter()
            .map(|o| o.weight * o.eval(x + self.margin, y + self.margin))
            .sum::<f64>()
            / total
    }

    /// Renders `I(x) = T(x - shift)`: content moved by `shift`.
    pub fn render(&self, width: usize, height: usize, shift: [f64; 2]) -> ScalarImage {
        ScalarImage::from_fn(width, height, |x, y| {
            self.eval(x as f64 - shift[0], y as f64 - shift[1])
        })
    }
}

impl Octave {
    fn eval(&self, x: f64, y: f64) -> f64 {
        let u = (x / self.spacing).clamp(0.0, (self.w - 1) as f64);
        let v = (y / self.spacing).clamp(0.0, (self.h - 1) as f64);
        let (u0, v0) = (u.floor(), v.floor());
        let (fu, fv) = (u - u0, v - v0);
        let (u0, v0) = (u0 as usize, v0 as usize);
        let u1 = (u0 + 1).min(self.w - 1);
        let v1 = (v0 + 1).min(self.h - 1);
        let at = |a: usize, b: usize| self.values[b * self.w + a];
        let top = at(u0, v0) * (1.0 - fu) + at(u1, v0) * fu;
        let bottom = at(u0, v1) * (1.0 - fu) + at(u1, v1) * fu;
        top * (1.0 - fv) + bottom * fv
    }
}

/// Image pair with ground-truth field from frame 1 to frame 2.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub i1: ScalarImage,
    pub i2: ScalarImage,
    pub gt: MotionField,
    /// Frame-1 pixels whose correspondence lands on intact frame-2 content.
    pub noc: Mask,
}

fn in_frame_mask(width: usize, height: usize, shift: [f64; 2]) -> Mask {
    Mask::from_fn(width, height, |x, y| {
        let tx = x as f64 + shift[0];
        let ty = y as f64 + shift[1];
        tx >= 0.0 && ty >= 0.0 && tx <= (width - 1) as f64 && ty <= (height - 1) as f64
    })
}

/// Frame 2 is frame 1 with its content translated by `shift`.
pub fn translated_pair(width: usize, height: usize, shift: [f64; 2], seed: u64) -> SyntheticPair {
    let margin = (shift[0].abs().max(shift[1].abs()).ceil() as usize) + 8;
    let tex = Texture::new(width, height, margin, 4, seed);
    SyntheticPair {
        i1: tex.render(width, height, [0.0, 0.0]),
        i2: tex.render(width, height, shift),
        gt: MotionField::constant(width, height, FieldKind::Flow, shift),
        noc: in_frame_mask(width, height, shift),
    }
}

/// Rectified stereo pair: frame 2 is frame 1 translated horizontally by
/// `displacement` (negative for a left reference view).
pub fn stereo_pair(width: usize, height: usize, displacement: f64, seed: u64) -> SyntheticPair {
    let mut pair = translated_pair(width, height, [displacement, 0.0], seed);
    pair.gt = MotionField::constant(width, height, FieldKind::Stereo, [displacement, 0.0]);
    pair
}

/// Translated pair whose frame-2 columns `band` are overwritten with an
/// unrelated texture. Frame-1 pixels mapping into the band or out of frame
/// are excluded from `noc`.
pub fn occluded_pair(
    width: usize,
    height: usize,
    shift: [f64; 2],
    band: std::ops::Range<usize>,
    seed: u64,
) -> SyntheticPair {
    let mut pair = translated_pair(width, height, shift, seed);
    let other = Texture::new(width, height, 8, 4, seed ^ 0x9e37_79b9_7f4a_7c15);
    for y in 0..height {
        for x in band.clone() {
            pair.i2.set(x, y, 0, other.eval(x as f64, y as f64));
        }
    }
    let (lo, hi) = (band.start as f64 - 1.0, band.end as f64);
    pair.noc = Mask::from_fn(width, height, |x, y| {
        let tx = x as f64 + shift[0];
        pair.noc.get(x, y) && !(tx > lo && tx < hi)
    });
    pair
}

/// Smooth random field: sum of a constant and a few low-frequency cosines.
pub fn smooth_field(
    width: usize,
    height: usize,
    kind: FieldKind,
    amplitude: f64,
    seed: u64,
) -> MotionField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut comp = || {
        let base = rng.gen_range(-amplitude..amplitude);
        let waves: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.gen_range(-0.25 * amplitude..0.25 * amplitude),
                    rng.gen_range(0.0..std::f64::consts::TAU) / width as f64,
                    rng.gen_range(0.0..std::f64::consts::TAU) / height as f64,
                    rng.gen_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        move |x: f64, y: f64| {
            base + waves
                .iter()
                .map(|(a, kx, ky, ph)| a * (kx * x + ky * y + ph).cos())
                .sum::<f64>()
        }
    };
    let fu = comp();
    let fv = comp();
    MotionField::from_fn(width, height, kind, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        Some([fu(xf, yf), fv(xf, yf)])
    })
}
