//! Portable graymap (PGM) reading and writing.
//!
//! Reads binary (`P5`) and plain (`P2`) graymaps with 8- or 16-bit samples.
//! Writes binary graymaps. Rows are stored top to bottom.

use std::path::Path;

use ndarray::Array2;

use crate::error::{AimError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Depth {
    Eight,
    Sixteen,
}

/// A decoded graymap; `pixels[[row, col]]` scaled to `[0, 1]` by `maxval`.
#[derive(Clone, Debug, PartialEq)]
pub struct Graymap {
    pub pixels: Array2<f64>,
    pub maxval: u16,
}

pub fn read(path: &Path) -> Result<Graymap> {
    decode(&std::fs::read(path)?)
}

struct Tokens<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Result<&'a str> {
        loop {
            while self.pos < self.data.len() && self.data[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.data.len() && self.data[self.pos] == b'#' {
                while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(AimError::format("graymap", "unexpected end of header"));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .map_err(|_| AimError::format("graymap", "non-ASCII header"))
    }

    fn number(&mut self) -> Result<usize> {
        let t = self.next()?;
        t.parse()
            .map_err(|_| AimError::format("graymap", format!("expected a number, found {t:?}")))
    }
}

pub fn decode(data: &[u8]) -> Result<Graymap> {
    let mut tok = Tokens { data, pos: 0 };
    let magic = tok.next()?;
    let binary = match magic {
        "P5" => true,
        "P2" => false,
        other => {
            return Err(AimError::format(
                "graymap",
                format!("unsupported magic {other:?}, expected P5 or P2"),
            ))
        }
    };
    let width = tok.number()?;
    let height = tok.number()?;
    let maxval = tok.number()?;
    if width == 0 || height == 0 {
        return Err(AimError::format("graymap", "zero-sized image"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(AimError::format("graymap", format!("maxval {maxval} out of range")));
    }
    let n = width * height;
    let mut raw = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = tok.pos + 1;
        let bytes_per = if maxval > 255 { 2 } else { 1 };
        let body = data
            .get(start..start + n * bytes_per)
            .ok_or_else(|| AimError::format("graymap", "raster shorter than header promises"))?;
        if bytes_per == 1 {
            raw.extend(body.iter().map(|&b| b as usize));
        } else {
            raw.extend(
                body.chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as usize),
            );
        }
    } else {
        for _ in 0..n {
            raw.push(tok.number()?);
        }
    }
    if let Some(bad) = raw.iter().find(|&&v| v > maxval) {
        return Err(AimError::format("graymap", format!("sample {bad} exceeds maxval {maxval}")));
    }
    let pixels = Array2::from_shape_vec((height, width), raw)
        .expect("length checked")
        .mapv(|v| v as f64 / maxval as f64);
    Ok(Graymap {
        pixels,
        maxval: maxval as u16,
    })
}

/// Encodes `pixels[[row, col]]` (already in `[0, 1]`, clamped otherwise) as
/// a binary graymap.
pub fn encode(pixels: &Array2<f64>, depth: Depth) -> Vec<u8> {
    let (h, w) = pixels.dim();
    let maxval: u32 = match depth {
        Depth::Eight => 255,
        Depth::Sixteen => 65535,
    };
    let mut out = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
    for &v in pixels.iter() {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
        match depth {
            Depth::Eight => out.push(q as u8),
            Depth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    out
}

/// Writes a map indexed `[[ia, ib]]` (first axis horizontal, second axis
/// vertical with +b up) as an image.
pub fn write_unit_map(path: &Path, map: &Array2<f64>, depth: Depth) -> Result<()> {
    std::fs::write(path, encode(&map_to_raster(map), depth))?;
    Ok(())
}

/// `[[ia, ib]]` map to `[[row, col]]` raster with the top row at the largest `b`.
pub fn map_to_raster(map: &Array2<f64>) -> Array2<f64> {
    let (na, nb) = map.dim();
    Array2::from_shape_fn((nb, na), |(row, col)| map[[col, nb - 1 - row]])
}

/// Inverse of [`map_to_raster`].
pub fn raster_to_map(raster: &Array2<f64>) -> Array2<f64> {
    let (h, w) = raster.dim();
    Array2::from_shape_fn((w, h), |(ia, ib)| raster[[h - 1 - ib, ia]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn binary_round_trip_both_depths() {
        let img = array![[0.0, 1.0, 0.5], [0.25, 0.75, 1.0]];
        for depth in [Depth::Eight, Depth::Sixteen] {
            let back = decode(&encode(&img, depth)).unwrap();
            assert_eq!(back.pixels.dim(), (2, 3));
            let tol = if depth == Depth::Eight { 1.0 / 255.0 } else { 1.0 / 65535.0 };
            for (a, b) in img.iter().zip(back.pixels.iter()) {
                assert!((a - b).abs() <= tol);
            }
        }
    }

    #[test]
    fn plain_format_with_comments() {
        let text = b"P2\n# a comment\n2 2\n# another\n10\n0 10\n5 10\n";
        let g = decode(text).unwrap();
        assert_eq!(g.maxval, 10);
        assert_eq!(g.pixels, array![[0.0, 1.0], [0.5, 1.0]]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"P6\n1 1\n255\n\0\0\0").is_err());
        assert!(decode(b"P5\n4 4\n255\n\0").is_err());
        assert!(decode(b"P2\n1 1\n10\n11\n").is_err());
        assert!(decode(b"").is_err());
    }

    #[test]
    fn map_raster_orientation() {
        // map[[ia, ib]]: ia horizontal, ib vertical upward
        let map = array![[1.0, 2.0], [3.0, 4.0]];
        let raster = map_to_raster(&map);
        // top-left is (ia = 0, ib = top)
        assert_eq!(raster, array![[2.0, 4.0], [1.0, 3.0]]);
        assert_eq!(raster_to_map(&raster), map);
    }
}
