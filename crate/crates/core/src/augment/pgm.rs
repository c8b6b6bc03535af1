//! Portable graymap (P2 ASCII / P5 binary) reader and P5 writer.

use std::path::Path;

use super::image::Image;
use crate::error::{Error, Result};

struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::Format("non-ASCII PGM header".into()))
    }

    fn number(&mut self) -> Result<usize> {
        let t = self.next()?;
        t.parse().map_err(|_| Error::Format(format!("bad PGM number {t:?}")))
    }
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Image> {
    let mut tok = Tokens { bytes, pos: 0 };
    let magic = tok.next()?;
    let (w, h, maxval) = (tok.number()?, tok.number()?, tok.number()?);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("PGM maxval {maxval} out of range")));
    }
    let n = w * h;
    let scale = maxval as f64;
    let pixels: Vec<f64> = match magic {
        "P2" => (0..n).map(|_| tok.number().map(|v| v as f64 / scale)).collect::<Result<_>>()?,
        "P5" => {
            let start = tok.pos + 1;
            let width = if maxval < 256 { 1 } else { 2 };
            let body = bytes
                .get(start..start + n * width)
                .ok_or_else(|| Error::Format("truncated PGM raster".into()))?;
            if width == 1 {
                body.iter().map(|&b| b as f64 / scale).collect()
            } else {
                body.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale).collect()
            }
        }
        m => return Err(Error::Format(format!("unsupported PGM magic {m:?}"))),
    };
    if pixels.iter().any(|&p| p > 1.0) {
        return Err(Error::Format("PGM sample exceeds maxval".into()));
    }
    Image::new(h, w, 1, pixels)
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    parse_pgm(&std::fs::read(path)?)
}

/// 8-bit P5 encoding of a grayscale image.
pub fn encode_pgm(img: &Image) -> Result<Vec<u8>> {
    if img.channels() != 1 {
        return Err(Error::invalid("PGM holds single-channel images only"));
    }
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|p| (p * 255.0).round() as u8));
    Ok(out)
}

pub fn write_pgm(img: &Image, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pgm(img)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_with_comments() {
        let img = parse_pgm(b"P2\n# fixture\n3 2\n4\n0 1 2\n3 4 0\n").unwrap();
        assert_eq!((img.height(), img.width()), (2, 3));
        assert_eq!(img.pixels(), &[0.0, 0.25, 0.5, 0.75, 1.0, 0.0]);
    }

    #[test]
    fn binary_round_trip() {
        let img = Image::from_fn(4, 5, 1, |_, y, x| ((y * 5 + x) * 12) as f64 / 255.0).unwrap();
        let back = parse_pgm(&encode_pgm(&img).unwrap()).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_pgm(b"P6\n1 1\n255\n\0\0\0").is_err());
        assert!(parse_pgm(b"P5\n4 4\n255\n\0").is_err());
        assert!(parse_pgm(b"P2\n1 1\n3\n9\n").is_err());
    }
}
