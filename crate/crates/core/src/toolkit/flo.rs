//! Middlebury `.flo` files: `PIEH`, little-endian `i32` width and height,
//! then row-major interleaved `f32` (u, v).

use std::fs;
use std::path::Path;

use crate::error::{Hd3Error, Result};
use crate::field::{FieldKind, MotionField};

const MAGIC: &[u8; 4] = b"PIEH";
/// Value written for invalid pixels.
pub const UNKNOWN_FLOW: f32 = 1e10;
/// Components with magnitude above this read back as invalid.
pub const UNKNOWN_THRESHOLD: f32 = 1e9;

pub fn encode_flo(f: &MotionField) -> Result<Vec<u8>> {
    let (w, h) = f.size();
    let to_i32 = |n: usize| {
        i32::try_from(n).map_err(|_| Hd3Error::Format(format!("dimension {n} too large for .flo")))
    };
    let mut out = Vec::with_capacity(12 + 8 * w * h);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&to_i32(w)?.to_le_bytes());
    out.extend_from_slice(&to_i32(h)?.to_le_bytes());
    for (v, &valid) in f.vectors().iter().zip(f.validity()) {
        let (u, v) = if valid {
            (v[0] as f32, v[1] as f32)
        } else {
            (UNKNOWN_FLOW, UNKNOWN_FLOW)
        };
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flo(bytes: &[u8]) -> Result<MotionField> {
    if bytes.len() < 12 {
        return Err(Hd3Error::Format("truncated .flo header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Hd3Error::Format("bad .flo magic tag".into()));
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let w = i32::from_le_bytes(word(4));
    let h = i32::from_le_bytes(word(8));
    if w <= 0 || h <= 0 {
        return Err(Hd3Error::Format(format!("bad .flo dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let needed = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(12))
        .ok_or_else(|| Hd3Error::Format("bad .flo dimensions".into()))?;
    if bytes.len() < needed {
        return Err(Hd3Error::Format(format!(
            "truncated .flo payload: {} of {needed} bytes",
            bytes.len()
        )));
    }
    Ok(MotionField::from_fn(w, h, FieldKind::Flow, |x, y| {
        let i = 12 + 8 * (y * w + x);
        let u = f32::from_le_bytes(word(i));
        let v = f32::from_le_bytes(word(i + 4));
        let unknown = |c: f32| !c.is_finite() || c.abs() > UNKNOWN_THRESHOLD;
        if unknown(u) || unknown(v) {
            None
        } else {
            Some([u as f64, v as f64])
        }
    }))
}

pub fn write_flo(path: impl AsRef<Path>, f: &MotionField) -> Result<()> {
    fs::write(path, encode_flo(f)?)?;
    Ok(())
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<MotionField> {
    decode_flo(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_pixel_layout() {
        let f = MotionField::constant(1, 1, FieldKind::Flow, [1.5, -2.0]);
        let bytes = encode_flo(&f).unwrap();
        assert_eq!(
            bytes,
            [
                0x50, 0x49, 0x45, 0x48, 0x01, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x00,
                0x00, 0xc0, 0x3f, 0x00, 0x00, 0x00, 0xc0
            ]
        );
        assert_eq!(decode_flo(&bytes).unwrap(), f);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let f = MotionField::zeros(3, 2, FieldKind::Flow);
        let mut bytes = encode_flo(&f).unwrap();
        assert!(decode_flo(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_flo(&bytes[..7]).is_err());
        bytes[0] = b'X';
        assert!(matches!(decode_flo(&bytes), Err(Hd3Error::Format(_))));
    }

    #[test]
    fn invalid_pixels_round_trip() {
        let mut f = MotionField::constant(4, 3, FieldKind::Flow, [0.25, 7.0]);
        f.set_invalid(2, 1);
        let back = decode_flo(&encode_flo(&f).unwrap()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.flo");
        let f = MotionField::from_fn(5, 4, FieldKind::Flow, |x, y| Some([x as f64 * 0.5, -(y as f64)]));
        write_flo(&path, &f).unwrap();
        assert_eq!(read_flo(&path).unwrap(), f);
    }
}
