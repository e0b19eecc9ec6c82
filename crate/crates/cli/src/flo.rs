//! Displacement-field files in the interoperable `.flo` layout: the
//! little-endian magic "PIEH" tag value, 32-bit width and height, then
//! row-major interleaved (dx, dy) little-endian f32 pairs. One file per
//! frame pair, numbered by the frame the slice is attached to.

use std::fs;
use std::path::{Path, PathBuf};

use flowinpaint::grid::{FlowDirection, FlowField, VecField2};

use crate::CliError;

const MAGIC: f32 = 202021.25; // the bytes "PIEH" read as a little-endian f32

fn bad(path: &Path, what: impl std::fmt::Display) -> CliError {
    CliError::data(format!("{}: {what}", path.display()))
}

pub fn write_slice(path: &Path, slice: &VecField2) -> Result<(), CliError> {
    let w = slice.width();
    let h = slice.height();
    let mut out = Vec::with_capacity(12 + w * h * 8);
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = slice.get(x, y);
            out.extend_from_slice(&(dx as f32).to_le_bytes());
            out.extend_from_slice(&(dy as f32).to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| bad(path, e))
}

pub fn read_slice(path: &Path) -> Result<VecField2, CliError> {
    let bytes = fs::read(path).map_err(|e| bad(path, e))?;
    if bytes.len() < 12 {
        return Err(bad(path, "truncated header"));
    }
    let magic = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != MAGIC {
        return Err(bad(path, "bad magic (not a flow file)"));
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let h = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if w <= 0 || h <= 0 {
        return Err(bad(path, "bad dimensions"));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = 12 + w * h * 8;
    if bytes.len() < expected {
        return Err(bad(path, "truncated samples"));
    }
    let mut slice = VecField2::zeros(w, h);
    let mut pos = 12;
    for y in 0..h {
        for x in 0..w {
            let dx = f32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as f64;
            let dy = f32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as f64;
            slice.set(x, y, (dx, dy));
            pos += 8;
        }
    }
    Ok(slice)
}

fn slice_path(dir: &Path, frame: usize) -> PathBuf {
    dir.join(format!("flow_{frame:04}.flo"))
}

/// Write every slice of a field into `dir`, one file per owning frame.
pub fn write_flow(dir: &Path, flow: &FlowField) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| bad(dir, e))?;
    for frame in flow.valid_frames() {
        write_slice(&slice_path(dir, frame), flow.slice(frame).unwrap())?;
    }
    Ok(())
}

/// Read a field of the given direction for a `frames`-frame sequence.
pub fn read_flow(
    dir: &Path,
    direction: FlowDirection,
    frames: usize,
) -> Result<FlowField, CliError> {
    let mut slices = Vec::with_capacity(frames.saturating_sub(1));
    let range = match direction {
        FlowDirection::Forward => 0..frames - 1,
        FlowDirection::Backward => 1..frames,
    };
    let mut dims: Option<(usize, usize)> = None;
    for frame in range {
        let path = slice_path(dir, frame);
        let slice = read_slice(&path)?;
        match dims {
            None => dims = Some((slice.width(), slice.height())),
            Some(d) => {
                if d != (slice.width(), slice.height()) {
                    return Err(bad(&path, "slice dimensions differ from the first file"));
                }
            }
        }
        slices.push(slice);
    }
    let (w, h) = dims.ok_or_else(|| bad(dir, "no flow slices"))?;
    FlowField::from_slices(w, h, frames, direction, slices)
        .map_err(|e| CliError::data(e.to_string()))
}
