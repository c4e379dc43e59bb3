//! KITTI-style 16-bit PNG flow and disparity maps.
//!
//! Flow: RGB, `raw = u * 64 + 32768` per component, third channel 1 when
//! valid. Disparity: gray, `raw = d * 256`, 0 marks an invalid pixel.
//! Off-grid values are rounded to the nearest quantization step.

use std::path::Path;

use crate::error::{Hd3Error, Result};
use crate::field::{FieldKind, MotionField};
use crate::matcher::DisparitySign;
use crate::toolkit::image::{read_png_raw, write_png_raw};

const FLOW_SCALE: f64 = 64.0;
const FLOW_ZERO: f64 = 32768.0;
const DISP_SCALE: f64 = 256.0;

fn quantize(value: f64, reason: &'static str) -> Result<u16> {
    let r = value.round();
    if !(0.0..=65535.0).contains(&r) {
        return Err(Hd3Error::Unrepresentable { value, reason });
    }
    Ok(r as u16)
}

pub fn encode_kitti_flow(f: &MotionField) -> Result<Vec<u16>> {
    let mut out = Vec::with_capacity(3 * f.vectors().len());
    for (v, &valid) in f.vectors().iter().zip(f.validity()) {
        if valid {
            for c in v {
                out.push(quantize(c * FLOW_SCALE + FLOW_ZERO, "flow outside +-512 px")?);
            }
            out.push(1);
        } else {
            out.extend_from_slice(&[0, 0, 0]);
        }
    }
    Ok(out)
}

pub fn decode_kitti_flow(width: usize, height: usize, raw: &[u16]) -> MotionField {
    MotionField::from_fn(width, height, FieldKind::Flow, |x, y| {
        let p = &raw[3 * (y * width + x)..][..3];
        (p[2] != 0).then(|| {
            [
                (f64::from(p[0]) - FLOW_ZERO) / FLOW_SCALE,
                (f64::from(p[1]) - FLOW_ZERO) / FLOW_SCALE,
            ]
        })
    })
}

/// Disparity magnitude for a horizontal displacement `u`.
fn disparity_of(u: f64, sign: DisparitySign) -> f64 {
    match sign {
        DisparitySign::NonPositive => -u,
        DisparitySign::NonNegative => u,
    }
}

pub fn encode_kitti_disparity(f: &MotionField, sign: DisparitySign) -> Result<Vec<u16>> {
    f.vectors()
        .iter()
        .zip(f.validity())
        .map(|(v, &valid)| {
            if !valid {
                return Ok(0);
            }
            let d = disparity_of(v[0], sign);
            let raw = quantize(d * DISP_SCALE, "disparity outside [0, 256)")?;
            if raw == 0 {
                return Err(Hd3Error::Unrepresentable {
                    value: d,
                    reason: "valid disparity rounds to the invalid marker 0",
                });
            }
            Ok(raw)
        })
        .collect()
}

pub fn decode_kitti_disparity(
    width: usize,
    height: usize,
    raw: &[u16],
    sign: DisparitySign,
) -> MotionField {
    MotionField::from_fn(width, height, FieldKind::Stereo, |x, y| {
        let r = raw[y * width + x];
        (r != 0).then(|| [disparity_of(f64::from(r) / DISP_SCALE, sign), 0.0])
    })
}

fn read_16bit(path: &Path, color: png::ColorType) -> Result<(usize, usize, Vec<u16>)> {
    let raw = read_png_raw(path, false)?;
    if raw.depth != png::BitDepth::Sixteen {
        return Err(Hd3Error::Format(format!(
            "expected a 16-bit PNG, found {:?}",
            raw.depth
        )));
    }
    if raw.color != color {
        return Err(Hd3Error::Format(format!(
            "expected {color:?} PNG, found {:?}",
            raw.color
        )));
    }
    Ok((raw.width, raw.height, raw.samples))
}

pub fn write_kitti_flow(path: impl AsRef<Path>, f: &MotionField) -> Result<()> {
    let raw = encode_kitti_flow(f)?;
    write_png_raw(path.as_ref(), f.width(), f.height(), png::ColorType::Rgb, Some(&raw), None, None)
}

pub fn read_kitti_flow(path: impl AsRef<Path>) -> Result<MotionField> {
    let (w, h, raw) = read_16bit(path.as_ref(), png::ColorType::Rgb)?;
    Ok(decode_kitti_flow(w, h, &raw))
}

pub fn write_kitti_disparity(
    path: impl AsRef<Path>,
    f: &MotionField,
    sign: DisparitySign,
) -> Result<()> {
    let raw = encode_kitti_disparity(f, sign)?;
    write_png_raw(
        path.as_ref(),
        f.width(),
        f.height(),
        png::ColorType::Grayscale,
        Some(&raw),
        None,
        None,
    )
}

pub fn read_kitti_disparity(path: impl AsRef<Path>, sign: DisparitySign) -> Result<MotionField> {
    let (w, h, raw) = read_16bit(path.as_ref(), png::ColorType::Grayscale)?;
    Ok(decode_kitti_disparity(w, h, &raw, sign))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ScalarImage;
    use crate::toolkit::image::write_gray_png;

    #[test]
    fn flow_zero_point() {
        let f = MotionField::zeros(1, 1, FieldKind::Flow);
        assert_eq!(encode_kitti_flow(&f).unwrap(), vec![32768, 32768, 1]);
    }

    #[test]
    fn disparity_examples() {
        let f = MotionField::constant(1, 1, FieldKind::Stereo, [-5.0, 0.0]);
        assert_eq!(encode_kitti_disparity(&f, DisparitySign::NonPositive).unwrap(), vec![1280]);
        let back = decode_kitti_disparity(2, 1, &[1280, 0], DisparitySign::NonPositive);
        assert_eq!(back.value(0, 0), Some([-5.0, 0.0]));
        assert!(!back.is_valid(1, 0));
    }

    #[test]
    fn unrepresentable_values() {
        let f = MotionField::constant(1, 1, FieldKind::Flow, [600.0, 0.0]);
        assert!(encode_kitti_flow(&f).is_err());
        let f = MotionField::constant(1, 1, FieldKind::Stereo, [3.0, 0.0]);
        assert!(encode_kitti_disparity(&f, DisparitySign::NonPositive).is_err());
        let f = MotionField::zeros(1, 1, FieldKind::Stereo);
        assert!(encode_kitti_disparity(&f, DisparitySign::NonPositive).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = MotionField::from_fn(5, 3, FieldKind::Flow, |x, y| {
            Some([x as f64 * 0.25 - 1.0, y as f64 / 64.0])
        });
        f.set_invalid(4, 2);
        let p = dir.path().join("flow.png");
        write_kitti_flow(&p, &f).unwrap();
        assert_eq!(read_kitti_flow(&p).unwrap(), f);

        let d = MotionField::from_fn(4, 2, FieldKind::Stereo, |x, _| {
            (x > 0).then(|| [-(x as f64) * 1.5, 0.0])
        });
        let p = dir.path().join("disp.png");
        write_kitti_disparity(&p, &d, DisparitySign::NonPositive).unwrap();
        assert_eq!(read_kitti_disparity(&p, DisparitySign::NonPositive).unwrap(), d);
    }

    #[test]
    fn eight_bit_png_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        write_gray_png(&p, &ScalarImage::filled(2, 2, 1, 0.5)).unwrap();
        assert!(matches!(read_kitti_flow(&p), Err(Hd3Error::Format(_))));
        assert!(read_kitti_disparity(&p, DisparitySign::NonPositive).is_err());
    }
}
