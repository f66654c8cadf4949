//! Minimal 8-bit grayscale PGM reader and writer (`P2` and `P5`).

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major, top row first.
    pub pixels: Vec<u16>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, maxval: u16, pixels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Pgm("image must be non-empty".into()));
        }
        if maxval == 0 || maxval > 255 {
            return Err(Error::Pgm(format!("maxval {maxval} outside 1..=255")));
        }
        if pixels.len() != width * height {
            return Err(Error::Pgm(format!(
                "expected {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|&&v| v > maxval) {
            return Err(Error::Pgm(format!("pixel value {v} exceeds maxval {maxval}")));
        }
        Ok(Self {
            width,
            height,
            maxval,
            pixels,
        })
    }

    pub fn get(&self, col: usize, row: usize) -> u16 {
        self.pixels[row * self.width + col]
    }
}

/// Whitespace/comment-aware tokenizer over the header (and `P2` body).
struct Tokens<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn skip_space(&mut self) {
        while self.pos < self.data.len() {
            let c = self.data[self.pos];
            if c == b'#' {
                while self.pos < self.data.len() && self.data[self.pos] != b'\n' && self.data[self.pos] != b'\r' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn next_token(&mut self) -> Option<&'a [u8]> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.data.len()
            && !self.data[self.pos].is_ascii_whitespace()
            && self.data[self.pos] != b'#'
        {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.data[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self
            .next_token()
            .ok_or_else(|| Error::Pgm(format!("unexpected end of data reading {what}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Pgm(format!("bad {what}: {:?}", String::from_utf8_lossy(tok))))
    }
}

/// Parses a `P2` or `P5` image with `maxval <= 255`.
pub fn parse_pgm(data: &[u8]) -> Result<GrayImage> {
    let mut tok = Tokens { data, pos: 0 };
    let magic = tok
        .next_token()
        .ok_or_else(|| Error::Pgm("empty file".into()))?;
    let binary = match magic {
        b"P2" => false,
        b"P5" => true,
        other => {
            return Err(Error::Pgm(format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = tok.number("width")?;
    let height = tok.number("height")?;
    let maxval = tok.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Pgm(format!("maxval {maxval} outside 1..=255")));
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| Error::Pgm("image too large".into()))?;
    let pixels = if binary {
        // exactly one whitespace byte separates the header from the raster
        let pos = tok.pos;
        if pos >= data.len() || !data[pos].is_ascii_whitespace() {
            return Err(Error::Pgm("missing whitespace after maxval".into()));
        }
        let raster = &data[pos + 1..];
        if raster.len() < count {
            return Err(Error::Pgm(format!(
                "raster has {} bytes, expected {count}",
                raster.len()
            )));
        }
        raster[..count].iter().map(|&b| u16::from(b)).collect()
    } else {
        let mut px = Vec::with_capacity(count);
        for _ in 0..count {
            let v = tok.number("pixel")?;
            px.push(u16::try_from(v).map_err(|_| Error::Pgm(format!("pixel value {v} too large")))?);
        }
        px
    };
    GrayImage::new(width, height, maxval as u16, pixels)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    parse_pgm(&std::fs::read(path)?)
}

/// Serializes as binary `P5`, with an optional comment line.
pub fn encode_pgm(image: &GrayImage, comment: Option<&str>) -> Vec<u8> {
    let mut out = Vec::with_capacity(image.pixels.len() + 64);
    out.extend_from_slice(b"P5\n");
    if let Some(c) = comment {
        for line in c.lines() {
            out.extend_from_slice(b"# ");
            out.extend_from_slice(line.as_bytes());
            out.push(b'\n');
        }
    }
    let _ = write!(out, "{} {}\n{}\n", image.width, image.height, image.maxval);
    out.extend(image.pixels.iter().map(|&v| v as u8));
    out
}

pub fn write_pgm(path: impl AsRef<Path>, image: &GrayImage, comment: Option<&str>) -> Result<()> {
    std::fs::write(path, encode_pgm(image, comment))?;
    Ok(())
}

/// Linear min-max scaling of a row-major field to `0..=255`. A constant
/// field maps to an all-zero image.
pub fn heatmap(values: &[f64], width: usize, height: usize) -> Result<GrayImage> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let pixels = values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u16
            } else {
                0
            }
        })
        .collect();
    GrayImage::new(width, height, 255, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_with_comments() {
        let src = b"P2\n# a comment\n3 2 # trailing\n255\n0 1 2\n3 4 255\n";
        let img = parse_pgm(src).unwrap();
        assert_eq!((img.width, img.height, img.maxval), (3, 2, 255));
        assert_eq!(img.pixels, vec![0, 1, 2, 3, 4, 255]);
        assert_eq!(img.get(2, 1), 255);
    }

    #[test]
    fn binary_round_trip() {
        let img = GrayImage::new(4, 3, 200, (0..12).map(|v| v * 10).collect()).unwrap();
        let bytes = encode_pgm(&img, Some("scale 0..1"));
        assert_eq!(parse_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn binary_raster_may_start_with_whitespace_value() {
        let mut bytes = b"P5 2 1 255\n".to_vec();
        bytes.extend_from_slice(&[b'\n', 7]);
        assert_eq!(parse_pgm(&bytes).unwrap().pixels, vec![10, 7]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_pgm(b"P6 1 1 255\n\0\0\0").is_err());
        assert!(parse_pgm(b"P2 2 2 255\n1 2 3").is_err());
        assert!(parse_pgm(b"P2 1 1 65535\n1").is_err());
        assert!(parse_pgm(b"P2 1 1 10\n11").is_err());
        assert!(parse_pgm(b"P5 2 2 255\n\x01").is_err());
    }

    #[test]
    fn heatmap_scaling() {
        let img = heatmap(&[0.0, 0.5, 1.0, 0.25], 2, 2).unwrap();
        assert_eq!(img.pixels, vec![0, 128, 255, 64]);
        let flat = heatmap(&[3.0; 4], 2, 2).unwrap();
        assert!(flat.pixels.iter().all(|&v| v == 0));
    }
}
