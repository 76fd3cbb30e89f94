//! Binary PPM (P6) frames and PGM (P5) masks, 8-bit only.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tokenizer::{Frame, MaskMap};

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse { offset, msg: msg.into() }
}

struct Header {
    width: usize,
    height: usize,
    /// Offset of the first payload byte.
    payload: usize,
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_uint(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    *pos = skip_space_and_comments(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(parse_err(start, format!("expected {what}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(start, format!("{what} out of range")))
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(parse_err(0, format!("expected magic {}", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let width = read_uint(bytes, &mut pos, "width")?;
    let height = read_uint(bytes, &mut pos, "height")?;
    let max_at = skip_space_and_comments(bytes, pos);
    let maxval = read_uint(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(parse_err(max_at, format!("maxval {maxval} unsupported, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(parse_err(2, "zero image dimension"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(parse_err(pos, "expected whitespace before payload"));
    }
    Ok(Header { width, height, payload: pos + 1 })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8]> {
    let need = h.width * h.height * channels;
    let have = bytes.len() - h.payload;
    if have < need {
        return Err(parse_err(bytes.len(), format!("truncated payload: {have} of {need} bytes")));
    }
    Ok(&bytes[h.payload..h.payload + need])
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Frame> {
    let h = parse_header(bytes, b"P6")?;
    let data = payload(bytes, &h, 3)?;
    let mut f = Frame::zeros(h.height, h.width);
    for y in 0..h.height {
        for x in 0..h.width {
            for c in 0..3 {
                f.set(c, y, x, data[(y * h.width + x) * 3 + c] as f32 / 255.0);
            }
        }
    }
    Ok(f)
}

/// Quantise to 8 bits per channel; values are clamped to `[0, 1]`.
pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    for y in 0..frame.height {
        for x in 0..frame.width {
            for c in 0..3 {
                out.push((frame.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<MaskMap> {
    let h = parse_header(bytes, b"P5")?;
    MaskMap::new(h.height, h.width, payload(bytes, &h, 1)?.to_vec())
}

pub fn encode_pgm(height: usize, width: usize, data: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

pub fn read_frame(path: &Path) -> Result<Frame> {
    decode_ppm(&fs::read(path)?)
}

pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    Ok(fs::write(path, encode_ppm(frame))?)
}

pub fn read_mask(path: &Path) -> Result<MaskMap> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_mask(path: &Path, mask: &MaskMap) -> Result<()> {
    Ok(fs::write(path, encode_pgm(mask.height, mask.width, &mask.data))?)
}
