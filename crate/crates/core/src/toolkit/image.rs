//! Image input (PNG, binary PGM/PPM) and indexed label maps.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Hd3Error, Result};
use crate::field::ScalarImage;

/// Decoded PNG samples, 8-bit samples widened to `u16`.
pub(crate) struct RawPng {
    pub width: usize,
    pub height: usize,
    pub color: png::ColorType,
    pub depth: png::BitDepth,
    pub samples: Vec<u16>,
}

impl RawPng {
    pub fn channels(&self) -> usize {
        match self.color {
            png::ColorType::Grayscale | png::ColorType::Indexed => 1,
            png::ColorType::GrayscaleAlpha => 2,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
        }
    }
}

/// Reads a PNG. With `expand`, palettes become RGB and sub-byte gray becomes 8-bit.
pub(crate) fn read_png_raw(path: &Path, expand: bool) -> Result<RawPng> {
    let mut decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    if expand {
        decoder.set_transformations(png::Transformations::EXPAND);
    }
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Hd3Error::Format("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    let (color, depth) = (info.color_type, info.bit_depth);
    let (width, height) = (info.width as usize, info.height as usize);
    let samples = match depth {
        png::BitDepth::Sixteen => buf
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect(),
        png::BitDepth::Eight => buf.iter().map(|&b| u16::from(b)).collect(),
        other => {
            if color != png::ColorType::Indexed && color != png::ColorType::Grayscale {
                return Err(Hd3Error::Format(format!("unsupported PNG bit depth {other:?}")));
            }
            let bits = other as usize;
            let stride = info.line_size;
            let mut out = Vec::with_capacity(width * height);
            for row in buf.chunks(stride).take(height) {
                for x in 0..width {
                    let bit = x * bits;
                    let byte = row[bit / 8];
                    let shift = 8 - bits - bit % 8;
                    out.push(u16::from((byte >> shift) & ((1u8 << bits) - 1)));
                }
            }
            out
        }
    };
    Ok(RawPng {
        width,
        height,
        color,
        depth,
        samples,
    })
}

pub(crate) fn write_png_raw(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    samples16: Option<&[u16]>,
    samples8: Option<&[u8]>,
    palette: Option<Vec<u8>>,
) -> Result<()> {
    let w = u32::try_from(width).map_err(|_| Hd3Error::Format("image too wide".into()))?;
    let h = u32::try_from(height).map_err(|_| Hd3Error::Format("image too tall".into()))?;
    let mut encoder = png::Encoder::new(BufWriter::new(File::create(path)?), w, h);
    encoder.set_color(color);
    if let Some(p) = palette {
        encoder.set_palette(p);
    }
    let bytes: Vec<u8> = match (samples16, samples8) {
        (Some(s), _) => {
            encoder.set_depth(png::BitDepth::Sixteen);
            s.iter().flat_map(|v| v.to_be_bytes()).collect()
        }
        (None, Some(s)) => {
            encoder.set_depth(png::BitDepth::Eight);
            s.to_vec()
        }
        (None, None) => unreachable!("no samples given"),
    };
    let mut writer = encoder.write_header()?;
    writer.write_image_data(&bytes)?;
    writer.finish()?;
    Ok(())
}

/// Reads a PNG (8/16-bit, gray or color, alpha dropped) or a binary
/// PGM/PPM into `[0, 1]` intensities with 1 or 3 channels.
pub fn read_image(path: impl AsRef<Path>) -> Result<ScalarImage> {
    let path = path.as_ref();
    let head = {
        use std::io::Read;
        let mut b = [0u8; 2];
        let n = File::open(path)?.read(&mut b)?;
        b[..n].to_vec()
    };
    if head.first() == Some(&b'P') {
        return crate::toolkit::pgm::read_pgm(path);
    }
    let raw = read_png_raw(path, true)?;
    let max = match raw.depth {
        png::BitDepth::Sixteen => 65535.0,
        _ => 255.0,
    };
    let src_ch = raw.channels();
    let out_ch = if src_ch >= 3 { 3 } else { 1 };
    let mut data = Vec::with_capacity(raw.width * raw.height * out_ch);
    for px in raw.samples.chunks_exact(src_ch) {
        data.extend(px[..out_ch].iter().map(|&s| f64::from(s) / max));
    }
    ScalarImage::new(raw.width, raw.height, out_ch, data)
}

/// Writes the first channel, clamped to `[0, 1]`, as 8-bit gray PNG.
pub fn write_gray_png(path: impl AsRef<Path>, img: &ScalarImage) -> Result<()> {
    let (w, h) = img.size();
    let mut bytes = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            bytes.push((img.get(x, y, 0).clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    write_png_raw(path.as_ref(), w, h, png::ColorType::Grayscale, None, Some(&bytes), None)
}

/// Hard class labels; `None` marks unlabeled or unknown pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Option<u32>>,
}

/// Label value stored for unlabeled pixels.
pub const IGNORE_LABEL: u8 = 255;

impl LabelImage {
    pub fn new(width: usize, height: usize, labels: Vec<Option<u32>>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Hd3Error::InvalidParameter(format!(
                "{} labels for a {width}x{height} image",
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> Option<u32> {
        self.labels[y * self.width + x]
    }

    /// One more than the largest label present.
    pub fn class_count(&self) -> usize {
        self.labels
            .iter()
            .flatten()
            .max()
            .map_or(0, |&m| m as usize + 1)
    }
}

/// Reads an indexed or 8-bit grayscale PNG; index 255 is unlabeled.
pub fn read_label_png(path: impl AsRef<Path>) -> Result<LabelImage> {
    let raw = read_png_raw(path.as_ref(), false)?;
    if raw.channels() != 1 || raw.depth == png::BitDepth::Sixteen {
        return Err(Hd3Error::Format(
            "label maps must be indexed or 8-bit grayscale PNG".into(),
        ));
    }
    let labels = raw
        .samples
        .iter()
        .map(|&s| (s != u16::from(IGNORE_LABEL)).then_some(u32::from(s)))
        .collect();
    LabelImage::new(raw.width, raw.height, labels)
}

/// Writes labels as an indexed PNG with a fixed palette.
pub fn write_label_png(path: impl AsRef<Path>, labels: &LabelImage) -> Result<()> {
    let mut bytes = Vec::with_capacity(labels.labels.len());
    for l in &labels.labels {
        bytes.push(match l {
            Some(v) if *v < u32::from(IGNORE_LABEL) => *v as u8,
            Some(v) => {
                return Err(Hd3Error::Unrepresentable {
                    value: f64::from(*v),
                    reason: "label index above 254",
                })
            }
            None => IGNORE_LABEL,
        });
    }
    let palette: Vec<u8> = (0..256u32)
        .flat_map(|i| {
            if i == u32::from(IGNORE_LABEL) {
                [0, 0, 0]
            } else {
                [(i * 97 % 256) as u8, (i * 57 % 256) as u8, (i * 151 % 256) as u8]
            }
        })
        .collect();
    write_png_raw(
        path.as_ref(),
        labels.width,
        labels.height,
        png::ColorType::Indexed,
        None,
        Some(&bytes),
        Some(palette),
    )
}
