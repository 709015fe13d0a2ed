//! Reading and writing PGM images, plain (P2) and binary (P5), up to
//! 16-bit samples. Binary files use the usual big-endian two-byte samples
//! when maxval exceeds 255.

use super::{DisparityMap, GrayImage, StereoError};
use std::fs;
use std::path::Path;

/// Splits the header into tokens, skipping whitespace and `#` comments.
/// Returns the remaining byte offset so binary rasters can start right
/// after the single whitespace that terminates the header.
struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        HeaderReader { bytes, pos: 0 }
    }

    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a str, StereoError> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            if self.bytes[self.pos] == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(StereoError::TruncatedData);
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| StereoError::MalformedHeader {
            detail: "non-ASCII bytes in header".into(),
        })
    }

    fn number(&mut self, what: &str) -> Result<usize, StereoError> {
        let tok = self.token()?;
        tok.parse().map_err(|_| StereoError::MalformedHeader {
            detail: format!("bad {what}: {tok:?}"),
        })
    }
}

pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage, StereoError> {
    let mut h = HeaderReader::new(bytes);
    let magic = h.token()?;
    if magic != "P2" && magic != "P5" {
        return Err(StereoError::MalformedHeader {
            detail: format!("expected P2 or P5, found {magic:?}"),
        });
    }
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(StereoError::MalformedHeader {
            detail: "zero image dimension".into(),
        });
    }
    if maxval == 0 || maxval > 65535 {
        return Err(StereoError::MalformedHeader {
            detail: format!("maxval {maxval} out of range 1..=65535"),
        });
    }
    let count = width * height;
    let mut data = Vec::with_capacity(count);
    if magic == "P2" {
        for _ in 0..count {
            let v = h.number("sample")?;
            if v > maxval {
                return Err(StereoError::MalformedHeader {
                    detail: format!("sample {v} exceeds maxval {maxval}"),
                });
            }
            data.push(v as u16);
        }
    } else {
        // exactly one whitespace byte separates the header from the raster
        let raster = &bytes[h.pos + 1..];
        if maxval > 255 {
            if raster.len() < 2 * count {
                return Err(StereoError::TruncatedData);
            }
            for s in 0..count {
                data.push(u16::from_be_bytes([raster[2 * s], raster[2 * s + 1]]));
            }
        } else {
            if raster.len() < count {
                return Err(StereoError::TruncatedData);
            }
            data.extend(raster[..count].iter().map(|&b| b as u16));
        }
    }
    Ok(GrayImage {
        width,
        height,
        maxval: maxval as u16,
        data,
    })
}

pub fn load_pgm(path: &Path) -> Result<GrayImage, StereoError> {
    parse_pgm(&fs::read(path)?)
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval > 255 {
        for &v in &img.data {
            out.extend_from_slice(&v.to_be_bytes());
        }
    } else {
        out.extend(img.data.iter().map(|&v| v as u8));
    }
    out
}

pub fn save_pgm(img: &GrayImage, path: &Path) -> Result<(), StereoError> {
    Ok(fs::write(path, encode_pgm(img))?)
}

/// Renders a disparity map as an image: labels times the map's scale,
/// clamped to the chosen maxval (255 unless the scaled range needs 16 bits).
pub fn disparity_to_image(d: &DisparityMap) -> GrayImage {
    let scaled: Vec<u32> = d
        .labels
        .iter()
        .map(|&l| u32::from(l) * u32::from(d.scale))
        .collect();
    let needs16 = scaled.iter().any(|&v| v > 255);
    let maxval: u16 = if needs16 { 65535 } else { 255 };
    GrayImage {
        width: d.width,
        height: d.height,
        maxval,
        data: scaled
            .iter()
            .map(|&v| v.min(u32::from(maxval)) as u16)
            .collect(),
    }
}

pub fn save_disparity(d: &DisparityMap, path: &Path) -> Result<(), StereoError> {
    save_pgm(&disparity_to_image(d), path)
}

/// Reads a disparity map back from an image, dividing intensities by
/// `scale` (a scale of 0 is treated as 1).
pub fn load_disparity(path: &Path, scale: u16) -> Result<DisparityMap, StereoError> {
    let img = load_pgm(path)?;
    let s = scale.max(1);
    Ok(DisparityMap {
        width: img.width,
        height: img.height,
        labels: img.data.iter().map(|&v| v / s).collect(),
        scale: s,
    })
}
