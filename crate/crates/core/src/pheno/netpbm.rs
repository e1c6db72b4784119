//! Binary netpbm readers/writers: P6 PPM frames (maxval 255) and P5 PGM
//! masks (nonzero byte = member).

use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Utc};

use super::{Frame, Mask, PhenoError};

fn bad(msg: impl Into<String>) -> PhenoError {
    PhenoError::BadFrame(msg.into())
}

/// Reads header tokens, skipping whitespace and `#` comments.
fn read_header_token(bytes: &[u8], pos: &mut usize) -> Result<String, PhenoError> {
    let mut tok = String::new();
    while *pos < bytes.len() {
        let b = bytes[*pos];
        if b == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else if b.is_ascii_whitespace() {
            if !tok.is_empty() {
                return Ok(tok);
            }
            *pos += 1;
        } else {
            tok.push(b as char);
            *pos += 1;
        }
    }
    if tok.is_empty() {
        Err(bad("truncated netpbm header"))
    } else {
        Ok(tok)
    }
}

fn parse_header(bytes: &[u8], magic: &str) -> Result<(usize, usize, usize), PhenoError> {
    let mut pos = 0;
    let got = read_header_token(bytes, &mut pos)?;
    if got != magic {
        return Err(bad(format!("expected {magic}, got {got}")));
    }
    let width: usize = read_header_token(bytes, &mut pos)?
        .parse()
        .map_err(|e| bad(format!("width: {e}")))?;
    let height: usize = read_header_token(bytes, &mut pos)?
        .parse()
        .map_err(|e| bad(format!("height: {e}")))?;
    let maxval: usize = read_header_token(bytes, &mut pos)?
        .parse()
        .map_err(|e| bad(format!("maxval: {e}")))?;
    if maxval != 255 {
        return Err(bad(format!("maxval {maxval}, only 255 supported")));
    }
    // single whitespace byte separates header from raster
    pos += 1;
    Ok((width, height, pos))
}

/// Reads a binary P6 PPM into a [`Frame`] with the supplied timestamp.
pub fn read_ppm(path: &Path, timestamp: DateTime<Utc>) -> Result<Frame, PhenoError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (width, height, start) = parse_header(&bytes, "P6")?;
    let need = width * height * 3;
    let raster = bytes
        .get(start..start + need)
        .ok_or_else(|| bad(format!("raster shorter than {need} bytes")))?;
    let pixels = raster
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Frame::new(width, height, pixels, timestamp)
}

/// Writes a [`Frame`] as binary P6 PPM.
pub fn write_ppm(frame: &Frame, path: &Path) -> Result<(), PhenoError> {
    let mut out = Vec::with_capacity(frame.pixels.len() * 3 + 32);
    write!(out, "P6\n{} {}\n255\n", frame.width, frame.height)?;
    for px in &frame.pixels {
        out.extend_from_slice(px);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a binary P5 PGM as a [`Mask`]: any nonzero byte is a member pixel.
pub fn read_pgm(path: &Path) -> Result<Mask, PhenoError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (width, height, start) = parse_header(&bytes, "P5")?;
    let need = width * height;
    let raster = bytes
        .get(start..start + need)
        .ok_or_else(|| bad(format!("raster shorter than {need} bytes")))?;
    Mask::new(width, height, raster.iter().map(|&b| b != 0).collect())
}

/// Writes a [`Mask`] as binary P5 PGM with member pixels at 255.
pub fn write_pgm(mask: &Mask, path: &Path) -> Result<(), PhenoError> {
    let mut out = Vec::with_capacity(mask.bits.len() + 32);
    write!(out, "P5\n{} {}\n255\n", mask.width, mask.height)?;
    out.extend(mask.bits.iter().map(|&b| if b { 255u8 } else { 0 }));
    std::fs::write(path, out)?;
    Ok(())
}
