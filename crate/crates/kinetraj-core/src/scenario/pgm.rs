//! PGM (P5 binary / P2 ASCII) reading and writing for drivable masks and
//! raster debug dumps. Nonzero pixels are drivable; pixel order is row-major
//! from the top-left, matching the in-memory grid layout.

use std::path::Path;

use crate::error::{Error, Result};

pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn read_pgm(path: &Path) -> Result<PgmImage> {
    let display = path.display().to_string();
    let data = std::fs::read(path).map_err(|e| Error::io(&display, e))?;
    parse_pgm(&data).map_err(|m| Error::parse(&display, m))
}

fn parse_pgm(data: &[u8]) -> std::result::Result<PgmImage, String> {
    let mut pos = 0usize;
    let mut token = |data: &[u8]| -> std::result::Result<String, String> {
        // Skip whitespace and '#' comments between tokens.
        loop {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("unexpected end of file".to_string());
        }
        Ok(String::from_utf8_lossy(&data[start..pos]).to_string())
    };

    let magic = token(data)?;
    if magic != "P5" && magic != "P2" {
        return Err(format!("not a PGM file (magic {magic})"));
    }
    let width: usize = token(data)?.parse().map_err(|e| format!("bad width: {e}"))?;
    let height: usize = token(data)?.parse().map_err(|e| format!("bad height: {e}"))?;
    let maxval: usize = token(data)?.parse().map_err(|e| format!("bad maxval: {e}"))?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }

    let mut pixels = Vec::with_capacity(width * height);
    if magic == "P5" {
        // Single whitespace byte after maxval, then raw data.
        pos += 1;
        if data.len() < pos + width * height {
            return Err("truncated P5 payload".to_string());
        }
        pixels.extend_from_slice(&data[pos..pos + width * height]);
    } else {
        for _ in 0..width * height {
            let v: usize = token(data)?.parse().map_err(|e| format!("bad pixel: {e}"))?;
            pixels.push(v.min(255) as u8);
        }
    }
    Ok(PgmImage { width, height, pixels })
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let display = path.display().to_string();
    if pixels.len() != width * height {
        return Err(Error::dimension("pgm pixel buffer size"));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    std::fs::write(path, out).map_err(|e| Error::io(&display, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p5_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.pgm");
        let pixels: Vec<u8> = (0..12).map(|i| if i % 3 == 0 { 0 } else { 255 }).collect();
        write_pgm(&path, 4, 3, &pixels).unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!((img.width, img.height), (4, 3));
        assert_eq!(img.pixels, pixels);
    }

    #[test]
    fn p2_with_comment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.p2.pgm");
        std::fs::write(&path, "P2\n# drivable\n2 2\n255\n0 255\n255 0\n").unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!(img.pixels, vec![0, 255, 255, 0]);
    }

    #[test]
    fn rejects_non_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        std::fs::write(&path, "P6\n1 1\n255\nxxx").unwrap();
        assert!(read_pgm(&path).is_err());
    }
}
