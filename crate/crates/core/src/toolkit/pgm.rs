//! Binary PGM (P5) and PPM (P6) images.

use std::fs;
use std::path::Path;

use crate::error::{Hd3Error, Result};
use crate::field::ScalarImage;

/// Writes the first channel, clamped to `[0, 1]` and scaled by 65535, as a
/// 16-bit big-endian PGM.
pub fn write_confidence_pgm(path: impl AsRef<Path>, img: &ScalarImage) -> Result<()> {
    let (w, h) = img.size();
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    out.reserve(2 * w * h);
    for y in 0..h {
        for x in 0..w {
            let v = (img.get(x, y, 0).clamp(0.0, 1.0) * 65535.0).round() as u16;
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a P5 or P6 file into `[0, 1]` intensities (1 or 3 channels).
pub fn read_pgm(path: impl AsRef<Path>) -> Result<ScalarImage> {
    decode_pnm(&fs::read(path)?)
}

fn decode_pnm(bytes: &[u8]) -> Result<ScalarImage> {
    let bad = |m: &str| Hd3Error::Format(format!("PNM: {m}"));
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(bad("expected P5 or P6 magic")),
    };
    let mut pos = 2;
    let mut header = [0usize; 3];
    for field in header.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header number"))?;
    }
    // Exactly one whitespace byte separates the header from the samples.
    pos += 1;
    let [w, h, maxval] = header;
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("bad dimensions or maxval"));
    }
    let bps = if maxval > 255 { 2 } else { 1 };
    let n = w * h * channels;
    let payload = bytes.get(pos..).unwrap_or_default();
    if payload.len() < n * bps {
        return Err(bad("truncated samples"));
    }
    let data = (0..n)
        .map(|i| {
            let s = if bps == 2 {
                u16::from_be_bytes([payload[2 * i], payload[2 * i + 1]])
            } else {
                u16::from(payload[i])
            };
            f64::from(s) / maxval as f64
        })
        .collect();
    ScalarImage::new(w, h, channels, data)
}
