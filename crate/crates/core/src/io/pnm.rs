use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, LabelMap};

/// An 8-bit grayscale image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format("pgm", "truncated header"));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format("pgm", format!("bad number {:?}", String::from_utf8_lossy(tok))))
}

/// Decodes a binary (P5) graymap with maxval at most 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<Gray> {
    let mut pos = 0;
    if header_token(bytes, &mut pos)? != b"P5" {
        return Err(Error::format("pgm", "expected P5 magic"));
    }
    let width = header_number(bytes, &mut pos)?;
    let height = header_number(bytes, &mut pos)?;
    let maxval = header_number(bytes, &mut pos)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format("pgm", format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height;
    let raster = bytes.get(pos..pos + n).ok_or_else(|| Error::format("pgm", "short raster"))?;
    Ok(Gray {
        width,
        height,
        pixels: raster.to_vec(),
    })
}

pub fn encode_pgm(img: &Gray) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read_pgm(path: &Path) -> Result<Gray> {
    decode_pgm(&std::fs::read(path)?)
}

pub fn write_pgm(path: &Path, img: &Gray) -> Result<()> {
    Ok(std::fs::write(path, encode_pgm(img))?)
}

/// Writes class ids as gray levels; ids above 255 are rejected.
pub fn write_label_pgm(path: &Path, lm: &LabelMap) -> Result<()> {
    let pixels = lm
        .labels()
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| Error::format("pgm", format!("label {l} exceeds 255"))))
        .collect::<Result<Vec<u8>>>()?;
    write_pgm(
        path,
        &Gray {
            width: lm.width(),
            height: lm.height(),
            pixels,
        },
    )
}

pub fn read_label_pgm(path: &Path) -> Result<LabelMap> {
    let g = read_pgm(path)?;
    LabelMap::new(g.width, g.height, g.pixels.iter().map(|&p| p as u32).collect())
}

/// Set pixels are written as 255, unset as 0.
pub fn write_mask_pgm(path: &Path, m: &BinaryMask) -> Result<()> {
    let pixels = m.to_bools().into_iter().map(|b| if b { 255 } else { 0 }).collect();
    write_pgm(
        path,
        &Gray {
            width: m.width(),
            height: m.height(),
            pixels,
        },
    )
}

/// Pixels at or above 128 are set.
pub fn read_mask_pgm(path: &Path) -> Result<BinaryMask> {
    let g = read_pgm(path)?;
    let bits: Vec<bool> = g.pixels.iter().map(|&p| p >= 128).collect();
    BinaryMask::from_bools(g.width, g.height, &bits)
}

/// Binary (P6) pixmap from packed RGB triples.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != 3 * width * height {
        return Err(Error::Shape(format!("{} bytes for a {width}x{height} pixmap", rgb.len())));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    Ok(std::fs::write(path, out)?)
}
