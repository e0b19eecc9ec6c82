//! Binary PGM (P5) and PPM (P6) frame I/O at 8 or 16 bits, plus the
//! white-is-missing mask convention.
//!
//! Intensities map linearly from [0, maxval] to [0, 1] on read and back
//! with round-half-up on write, so a write/read round trip after the first
//! quantization is the identity. 16-bit samples are big-endian per the
//! format.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use flowinpaint::grid::Field2;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnmFormat {
    Pgm,
    Ppm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PnmHeader {
    pub format: PnmFormat,
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
}

fn bad(path: &Path, what: impl std::fmt::Display) -> CliError {
    CliError::data(format!("{}: {what}", path.display()))
}

/// Parse the header tokens (magic, width, height, maxval), honoring
/// whitespace and `#` comments; returns the header and the offset of the
/// first sample byte.
pub fn parse_header(bytes: &[u8], path: &Path) -> Result<(PnmHeader, usize), CliError> {
    let format = match bytes.get(0..2) {
        Some(b"P5") => PnmFormat::Pgm,
        Some(b"P6") => PnmFormat::Ppm,
        _ => return Err(bad(path, "not a binary PGM/PPM (missing P5/P6 magic)")),
    };
    let mut pos = 2usize;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(bad(path, "truncated header")),
            }
        }
        let start = pos;
        while let Some(b) = bytes.get(pos) {
            if b.is_ascii_digit() {
                pos += 1;
            } else {
                break;
            }
        }
        if pos == start {
            return Err(bad(path, "malformed header field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = text
            .parse::<u32>()
            .map_err(|_| bad(path, "header field out of range"))?;
    }
    // exactly one whitespace byte separates the header from the samples
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(bad(path, "missing sample separator")),
    }
    let (width, height, maxval) = (fields[0] as usize, fields[1] as usize, fields[2]);
    if width == 0 || height == 0 {
        return Err(bad(path, "zero dimensions"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad(path, format!("unsupported maxval {maxval}")));
    }
    Ok((
        PnmHeader {
            format,
            width,
            height,
            maxval,
        },
        pos,
    ))
}

/// Read a frame as one plane per channel, normalized to [0, 1].
pub fn read_frame(path: &Path) -> Result<(Vec<Field2>, PnmHeader), CliError> {
    let bytes = fs::read(path).map_err(|e| bad(path, e))?;
    let (header, offset) = parse_header(&bytes, path)?;
    let channels = match header.format {
        PnmFormat::Pgm => 1,
        PnmFormat::Ppm => 3,
    };
    let samples = header.width * header.height * channels;
    let wide = header.maxval > 255;
    let expected = samples * if wide { 2 } else { 1 };
    let data = &bytes[offset..];
    if data.len() < expected {
        return Err(bad(
            path,
            format!("expected {expected} sample bytes, found {}", data.len()),
        ));
    }
    let scale = 1.0 / header.maxval as f64;
    let mut planes = vec![Field2::zeros(header.width, header.height); channels];
    for y in 0..header.height {
        for x in 0..header.width {
            for (c, plane) in planes.iter_mut().enumerate() {
                let i = (y * header.width + x) * channels + c;
                let raw = if wide {
                    u16::from_be_bytes([data[2 * i], data[2 * i + 1]]) as u32
                } else {
                    data[i] as u32
                };
                plane.set(x, y, (raw.min(header.maxval)) as f64 * scale);
            }
        }
    }
    Ok((planes, header))
}

/// Write channels as P5 (one) or P6 (three) with the requested maxval
/// (255 or 65535). Values are clamped to [0, 1] and quantized
/// round-half-up.
pub fn write_frame(path: &Path, planes: &[&Field2], maxval: u32) -> Result<(), CliError> {
    let channels = planes.len();
    let (magic, fmt_channels) = match channels {
        1 => ("P5", 1),
        3 => ("P6", 3),
        n => {
            return Err(CliError::data(format!(
                "{}: cannot encode {n} channels as PGM/PPM",
                path.display()
            )))
        }
    };
    assert!(maxval == 255 || maxval == 65535);
    let w = planes[0].width();
    let h = planes[0].height();
    let mut out = Vec::with_capacity(64 + w * h * fmt_channels * 2);
    write!(out, "{magic}\n{w} {h}\n{maxval}\n").unwrap();
    for y in 0..h {
        for x in 0..w {
            for plane in planes {
                let v = plane.get(x, y).clamp(0.0, 1.0);
                let q = (v * maxval as f64 + 0.5).floor().min(maxval as f64) as u32;
                if maxval > 255 {
                    out.extend_from_slice(&(q as u16).to_be_bytes());
                } else {
                    out.push(q as u8);
                }
            }
        }
    }
    write_atomic(path, &out).map_err(|e| bad(path, e))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

/// Read a mask frame: any nonzero sample is missing.
pub fn read_mask_frame(path: &Path) -> Result<(Vec<Vec<bool>>, usize, usize), CliError> {
    let bytes = fs::read(path).map_err(|e| bad(path, e))?;
    let (header, offset) = parse_header(&bytes, path)?;
    if header.format != PnmFormat::Pgm {
        return Err(bad(path, "masks must be single-channel PGM"));
    }
    let wide = header.maxval > 255;
    let expected = header.width * header.height * if wide { 2 } else { 1 };
    let data = &bytes[offset..];
    if data.len() < expected {
        return Err(bad(path, "truncated mask samples"));
    }
    let mut rows = vec![vec![false; header.width]; header.height];
    for y in 0..header.height {
        for x in 0..header.width {
            let i = y * header.width + x;
            let raw = if wide {
                u16::from_be_bytes([data[2 * i], data[2 * i + 1]]) as u32
            } else {
                data[i] as u32
            };
            rows[y][x] = raw != 0;
        }
    }
    Ok((rows, header.width, header.height))
}

/// Write a mask frame: 255 marks missing pixels, 0 known ones.
pub fn write_mask_frame(
    path: &Path,
    missing: impl Fn(usize, usize) -> bool,
    width: usize,
    height: usize,
) -> Result<(), CliError> {
    let mut out = Vec::with_capacity(32 + width * height);
    write!(out, "P5\n{width} {height}\n255\n").unwrap();
    for y in 0..height {
        for x in 0..width {
            out.push(if missing(x, y) { 255 } else { 0 });
        }
    }
    let mut f = fs::File::create(path).map_err(|e| bad(path, e))?;
    f.write_all(&out).map_err(|e| bad(path, e))
}
