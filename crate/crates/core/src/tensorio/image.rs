use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SIDE: usize = 8;

/// Row-major image with values in [0, 1]; 1 (gray) or 3 (RGB) channels,
/// channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let img = ImageBuffer {
            height,
            width,
            channels,
            data,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Invalid(format!(
                "unsupported channel count {} (expected 1 or 3)",
                self.channels
            )));
        }
        if self.height < MIN_SIDE || self.width < MIN_SIDE {
            return Err(Error::Invalid(format!(
                "image {}x{} smaller than {MIN_SIDE}x{MIN_SIDE}",
                self.height, self.width
            )));
        }
        let n = self.height * self.width * self.channels;
        if self.data.len() != n {
            return Err(Error::dim("image payload", n, self.data.len()));
        }
        if let Some(v) = self.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("image value {v} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// 0.299 R + 0.587 G + 0.114 B, or the value itself for grayscale.
    pub fn luma(&self, idx: usize) -> f64 {
        if self.channels == 1 {
            self.data[idx]
        } else {
            let p = &self.data[3 * idx..3 * idx + 3];
            0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
        }
    }

    pub fn luma_plane(&self) -> Vec<f64> {
        (0..self.pixels()).map(|i| self.luma(i)).collect()
    }

    pub fn mse(&self, other: &ImageBuffer) -> Result<f64> {
        if self.data.len() != other.data.len() {
            return Err(Error::dim("image mse", self.data.len(), other.data.len()));
        }
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(s / self.data.len() as f64)
    }

    /// Horizontal strip of equally sized images.
    pub fn montage(frames: &[ImageBuffer]) -> Result<ImageBuffer> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Invalid("montage of zero frames".into()))?;
        let (h, w, c) = (first.height, first.width, first.channels);
        let total_w = w * frames.len();
        let mut data = vec![0.0; h * total_w * c];
        for (k, f) in frames.iter().enumerate() {
            if f.height != h || f.width != w || f.channels != c {
                return Err(Error::dim("montage frame", h * w * c, f.data.len()));
            }
            for y in 0..h {
                let src = &f.data[y * w * c..(y + 1) * w * c];
                let off = (y * total_w + k * w) * c;
                data[off..off + w * c].copy_from_slice(src);
            }
        }
        ImageBuffer::new(h, total_w, c, data)
    }
}

/// Per-pixel integer labels in `[0, label_count)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMaskBuffer {
    pub height: usize,
    pub width: usize,
    pub label_count: usize,
    pub labels: Vec<u8>,
}

impl LabelMaskBuffer {
    pub fn new(height: usize, width: usize, label_count: usize, labels: Vec<u8>) -> Result<Self> {
        if label_count == 0 || label_count > 256 {
            return Err(Error::Invalid(format!("label count {label_count} out of range")));
        }
        if labels.len() != height * width {
            return Err(Error::dim("mask payload", height * width, labels.len()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= label_count) {
            return Err(Error::Invalid(format!("label {l} >= label count {label_count}")));
        }
        Ok(LabelMaskBuffer {
            height,
            width,
            label_count,
            labels,
        })
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn agreement(&self, other: &LabelMaskBuffer) -> f64 {
        let same = self
            .labels
            .iter()
            .zip(&other.labels)
            .filter(|(a, b)| a == b)
            .count();
        same as f64 / self.labels.len() as f64
    }
}

fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn encode_pnm(magic: &str, width: usize, height: usize, payload: &[u8]) -> Vec<u8> {
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(payload);
    out
}

pub fn write_image(path: &Path, img: &ImageBuffer) -> Result<()> {
    img.validate()?;
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let payload: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    super::write_bytes(path, &encode_pnm(magic, img.width, img.height, &payload))
}

pub fn write_mask(path: &Path, mask: &LabelMaskBuffer) -> Result<()> {
    super::write_bytes(path, &encode_pnm("P5", mask.width, mask.height, &mask.labels))
}

struct Pnm {
    channels: usize,
    width: usize,
    height: usize,
    payload: Vec<u8>,
}

fn parse_pnm(path: &Path, bytes: &[u8]) -> Result<Pnm> {
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PNM header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let channels = match tokens[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::format(path, format!("unsupported PNM magic {other}"))),
    };
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(path, format!("bad PNM header field {s:?}")))
    };
    let (width, height, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval != 255 {
        return Err(Error::format(path, format!("only 8-bit PNM supported, maxval {maxval}")));
    }
    let n = width * height * channels;
    if bytes.len() < pos || bytes.len() - pos != n {
        return Err(Error::dim("PNM raster bytes", n, bytes.len().saturating_sub(pos)));
    }
    Ok(Pnm {
        channels,
        width,
        height,
        payload: bytes[pos..].to_vec(),
    })
}

pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    let bytes = super::read_bytes(path)?;
    let p = parse_pnm(path, &bytes)?;
    let data = p.payload.iter().map(|&b| b as f64 / 255.0).collect();
    ImageBuffer::new(p.height, p.width, p.channels, data)
}

pub fn read_mask(path: &Path, label_count: usize) -> Result<LabelMaskBuffer> {
    let bytes = super::read_bytes(path)?;
    let p = parse_pnm(path, &bytes)?;
    if p.channels != 1 {
        return Err(Error::format(path, "label masks must be single-channel PGM"));
    }
    LabelMaskBuffer::new(p.height, p.width, label_count, p.payload)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gray_roundtrips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.pgm");
        let img = ImageBuffer::filled(8, 8, 1, 0.0).unwrap();
        write_image(&p, &img).unwrap();
        assert_eq!(read_image(&p).unwrap(), img);
    }

    #[test]
    fn rgb_gradient_within_quantization_bound() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.ppm");
        let (h, w) = (16, 16);
        let mut data = Vec::new();
        for y in 0..h {
            for x in 0..w {
                data.push(x as f64 / 15.0);
                data.push(y as f64 / 15.0);
                data.push((x + y) as f64 / 30.0);
            }
        }
        let img = ImageBuffer::new(h, w, 3, data).unwrap();
        write_image(&p, &img).unwrap();
        let back = read_image(&p).unwrap();
        assert_eq!((back.height, back.width, back.channels), (16, 16, 3));
        let dev = img
            .data
            .iter()
            .zip(&back.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dev <= 1.0 / 255.0, "max deviation {dev}");
    }

    #[test]
    fn two_channels_rejected() {
        let err = ImageBuffer::new(8, 8, 2, vec![0.0; 128]).unwrap_err();
        assert!(err.to_string().contains("channel"));
    }

    #[test]
    fn out_of_range_values_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageBuffer {
            height: 8,
            width: 8,
            channels: 1,
            data: vec![1.5; 64],
        };
        assert!(write_image(&dir.path().join("bad.pgm"), &img).is_err());
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n8 8\n255\n".to_vec();
        bytes.extend(std::iter::repeat_n(255u8, 64));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        std::fs::write(&p, bytes).unwrap();
        let img = read_image(&p).unwrap();
        assert!(img.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mask_labels_bounded_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let mut labels = vec![0u8; 64];
        labels[10] = 9;
        std::fs::write(&p, encode_pnm("P5", 8, 8, &labels)).unwrap();
        assert!(read_mask(&p, 9).is_err());
        assert_eq!(read_mask(&p, 10).unwrap().labels, labels);
    }

    #[test]
    fn montage_concatenates_horizontally() {
        let a = ImageBuffer::filled(8, 8, 1, 0.0).unwrap();
        let b = ImageBuffer::filled(8, 8, 1, 1.0).unwrap();
        let m = ImageBuffer::montage(&[a, b]).unwrap();
        assert_eq!(m.width, 16);
        assert_eq!(m.data[7], 0.0);
        assert_eq!(m.data[8], 1.0);
    }
}
