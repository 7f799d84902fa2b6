//! Portable Float Map I/O for depth and disparity grids.
//!
//! Grayscale "Pf" maps only; a negative scale signals little-endian
//! payload. Rows are stored bottom-to-top per the format. Invalid pixels
//! travel as NaN. The scale magnitude is preserved on write (always 1.0)
//! and ignored on read, as is conventional.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::map::Map2D;

/// Dimension guard: rejects headers that would demand absurd allocations.
const MAX_PIXELS: u64 = 1 << 26;
const MAX_SIDE: u64 = 1 << 20;

pub fn write_pfm_bytes(map: &Map2D) -> Vec<u8> {
    let w = map.width();
    let h = map.height();
    let mut out = Vec::with_capacity(32 + w * h * 4);
    // Negative scale = little-endian.
    write!(out, "Pf\n{} {}\n-1.0\n", w, h).expect("vec write");
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&map.get(x, y).to_le_bytes());
        }
    }
    out
}

pub fn write_pfm(map: &Map2D, path: &Path) -> Result<()> {
    std::fs::write(path, write_pfm_bytes(map)).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<Map2D> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_pfm_bytes(&bytes)
}

/// Parse a PFM byte stream. Never panics on malformed input.
pub fn read_pfm_bytes(bytes: &[u8]) -> Result<Map2D> {
    let mut pos = 0usize;

    let magic = next_token(bytes, &mut pos)?;
    match magic.as_slice() {
        b"Pf" => {}
        b"PF" => return Err(Error::Parse("color PFM (PF) is not supported".into())),
        _ => return Err(Error::Parse("not a PFM stream (missing Pf magic)".into())),
    }

    let width = parse_dim(&next_token(bytes, &mut pos)?, "width")?;
    let height = parse_dim(&next_token(bytes, &mut pos)?, "height")?;
    if width == 0 || height == 0 {
        return Err(Error::Parse("PFM dimensions must be positive".into()));
    }
    if width > MAX_SIDE || height > MAX_SIDE || width * height > MAX_PIXELS {
        return Err(Error::Parse(format!(
            "PFM dimensions {width}x{height} exceed the supported size"
        )));
    }

    let scale_tok = next_token(bytes, &mut pos)?;
    let scale: f64 = std::str::from_utf8(&scale_tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse("invalid PFM scale".into()))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Parse("PFM scale must be finite and nonzero".into()));
    }
    let little_endian = scale < 0.0;

    // Exactly one whitespace byte separates the header from the payload;
    // next_token has already consumed it.
    let w = width as usize;
    let h = height as usize;
    let need = w * h * 4;
    let payload = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Parse("PFM payload truncated".into()))?;

    let mut data = vec![0.0f32; w * h];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little_endian {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        // Bottom-to-top storage.
        let y = h - 1 - i / w;
        let x = i % w;
        data[y * w + x] = v;
    }
    Ok(Map2D::from_vec(w, h, data))
}

fn parse_dim(tok: &[u8], what: &str) -> Result<u64> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<u64>().ok())
        .ok_or_else(|| Error::Parse(format!("invalid PFM {what}")))
}

/// Read the next whitespace-delimited token, then consume exactly one
/// trailing whitespace byte.
fn next_token(bytes: &[u8], pos: &mut usize) -> Result<Vec<u8>> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Parse("unexpected end of PFM header".into()));
    }
    let tok = bytes[start..*pos].to_vec();
    if *pos < bytes.len() {
        *pos += 1; // single separator after the token
    }
    Ok(tok)
}
