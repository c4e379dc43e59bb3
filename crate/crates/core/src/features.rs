//! Fixed census-descriptor pyramids.
//!
//! Each pixel gets a 63-bit descriptor from a 9×7 window (row-major, the
//! center position included as a constant 0 bit): bit set when the
//! neighbor is darker than the center. Borders use clamped neighborhoods.

use crate::error::{Hd3Error, Result};
use crate::field::ScalarImage;

pub const CENSUS_HALF_W: i64 = 4;
pub const CENSUS_HALF_H: i64 = 3;
/// Bits per descriptor.
pub const CENSUS_BITS: u32 = 63;
/// Smallest allowed coarsest-level side.
pub const MIN_LEVEL_SIZE: usize = 8;

/// 63-bit census descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Census(pub u64);

/// Descriptor image for one pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct CensusImage {
    width: usize,
    height: usize,
    desc: Vec<Census>,
}

impl CensusImage {
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
    pub fn get(&self, x: usize, y: usize) -> Census {
        self.desc[y * self.width + x]
    }
}

/// Census transform of the first channel of `img`.
pub fn census_transform(img: &ScalarImage) -> CensusImage {
    let (w, h) = img.size();
    let at = |x: i64, y: i64| {
        let cx = x.clamp(0, w as i64 - 1) as usize;
        let cy = y.clamp(0, h as i64 - 1) as usize;
        img.get(cx, cy, 0)
    };
    let mut desc = Vec::with_capacity(w * h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let center = at(x, y);
            let mut bits = 0u64;
            let mut k = 0;
            for dy in -CENSUS_HALF_H..=CENSUS_HALF_H {
                for dx in -CENSUS_HALF_W..=CENSUS_HALF_W {
                    if at(x + dx, y + dy) < center {
                        bits |= 1 << k;
                    }
                    k += 1;
                }
            }
            desc.push(Census(bits));
        }
    }
    CensusImage {
        width: w,
        height: h,
        desc,
    }
}

/// Normalized Hamming distance in `[0, 1]`; a missing descriptor costs 1.
#[inline]
pub fn match_cost(a: Census, b: Option<Census>) -> f64 {
    match b {
        Some(b) => hamming(a, b) as f64 / CENSUS_BITS as f64,
        None => 1.0,
    }
}

#[inline]
pub fn hamming(a: Census, b: Census) -> u32 {
    (a.0 ^ b.0).count_ones()
}

/// Multi-scale descriptors for one frame; index 0 is the coarsest level.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    levels: Vec<CensusImage>,
    images: Vec<ScalarImage>,
}

impl FeaturePyramid {
    pub fn levels(&self) -> &[CensusImage] {
        &self.levels
    }

    /// Grayscale images the descriptors were computed from.
    pub fn images(&self) -> &[ScalarImage] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Checks that `levels` halvings of a `width`×`height` image are exact and
/// leave at least [`MIN_LEVEL_SIZE`] pixels per side.
pub fn check_pyramid_geometry(width: usize, height: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Hd3Error::InvalidParameter("pyramid needs at least one level".into()));
    }
    if levels > 16 {
        return Err(Hd3Error::InvalidParameter(format!("{levels} pyramid levels is too many")));
    }
    let factor = 1usize << (levels - 1);
    if !width.is_multiple_of(factor) || !height.is_multiple_of(factor) {
        return Err(Hd3Error::NotDivisible {
            factor,
            width,
            height,
        });
    }
    if width / factor < MIN_LEVEL_SIZE || height / factor < MIN_LEVEL_SIZE {
        return Err(Hd3Error::ImageTooSmall {
            width,
            height,
            levels,
            min: MIN_LEVEL_SIZE,
        });
    }
    Ok(())
}

/// Builds a `levels`-deep pyramid: grayscale input at the finest level,
/// each coarser level blurred and decimated by 2.
pub fn build_pyramid(img: &ScalarImage, levels: usize) -> Result<FeaturePyramid> {
    check_pyramid_geometry(img.width(), img.height(), levels)?;
    let mut images = vec![img.to_gray()];
    for _ in 1..levels {
        let next = blur_decimate(images.last().expect("non-empty"));
        images.push(next);
    }
    images.reverse();
    let levels = images.iter().map(census_transform).collect();
    Ok(FeaturePyramid { levels, images })
}

/// Binomial [1 3 3 1]/8 blur and ×2 decimation. Output pixel `x` is centered
/// on input coordinate `2x + 0.5`, matching the field resampling phase.
pub fn blur_decimate(img: &ScalarImage) -> ScalarImage {
    const K: [f64; 4] = [0.125, 0.375, 0.375, 0.125];
    let (w, h) = img.size();
    let (ow, oh) = (w / 2, h / 2);
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = K
                .iter()
                .enumerate()
                .map(|(k, wt)| wt * img.get(clamp(2 * x as i64 - 1 + k as i64, w), y, 0))
                .sum();
        }
    }
    ScalarImage::from_fn(ow, oh, |x, y| {
        K.iter()
            .enumerate()
            .map(|(k, wt)| wt * rows[clamp(2 * y as i64 - 1 + k as i64, h) * ow + x])
            .sum()
    })
}
