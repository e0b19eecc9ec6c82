//! Sequence-on-disk handling: a directory of numbered frames sharing one
//! format, size, and bit depth, with contiguous zero-padded indices.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use flowinpaint::grid::{Field2, ImageSequence, Mask};

use crate::{flo, pnm, CliError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameFormat {
    Pgm8,
    Pgm16,
    Ppm8,
    Ppm16,
    Png,
}

impl FrameFormat {
    pub fn parse(s: &str) -> Result<FrameFormat, CliError> {
        match s {
            "pgm" | "pgm8" => Ok(FrameFormat::Pgm8),
            "pgm16" => Ok(FrameFormat::Pgm16),
            "ppm" | "ppm8" => Ok(FrameFormat::Ppm8),
            "ppm16" => Ok(FrameFormat::Ppm16),
            "png" => Ok(FrameFormat::Png),
            other => Err(CliError::usage(format!(
                "unknown frame format '{other}' (pgm, pgm16, ppm, ppm16, png)"
            ))),
        }
    }

    fn extension(self) -> &'static str {
        match self {
            FrameFormat::Pgm8 | FrameFormat::Pgm16 => "pgm",
            FrameFormat::Ppm8 | FrameFormat::Ppm16 => "ppm",
            FrameFormat::Png => "png",
        }
    }
}

/// Numbered frame files in a directory, sorted and validated contiguous.
fn scan_frames(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries =
        fs::read_dir(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    let mut by_index: BTreeMap<u64, PathBuf> = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        let path = entry.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if !matches!(ext.as_deref(), Some("pgm" | "ppm" | "png")) {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        let digits: String = stem
            .chars()
            .rev()
            .take_while(|c| c.is_ascii_digit())
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        if digits.is_empty() {
            return Err(CliError::data(format!(
                "{}: frame file has no trailing index",
                path.display()
            )));
        }
        let index: u64 = digits
            .parse()
            .map_err(|_| CliError::data(format!("{}: bad frame index", path.display())))?;
        if let Some(old) = by_index.insert(index, path) {
            return Err(CliError::data(format!(
                "{}: duplicate frame index {index}",
                old.display()
            )));
        }
    }
    if by_index.is_empty() {
        return Err(CliError::data(format!(
            "{}: no frame files found",
            dir.display()
        )));
    }
    let first = *by_index.keys().next().unwrap();
    let last = *by_index.keys().last().unwrap();
    if (last - first + 1) as usize != by_index.len() {
        return Err(CliError::data(format!(
            "{}: frame indices are not contiguous ({} files spanning {first}..={last})",
            dir.display(),
            by_index.len()
        )));
    }
    Ok(by_index.into_values().collect())
}

fn read_png_frame(path: &Path) -> Result<Vec<Field2>, CliError> {
    let img = image::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let planes = match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            vec![Field2::from_fn(w, h, |x, y| {
                g.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0
            })]
        }
        image::DynamicImage::ImageLuma16(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            vec![Field2::from_fn(w, h, |x, y| {
                g.get_pixel(x as u32, y as u32).0[0] as f64 / 65535.0
            })]
        }
        other => {
            let rgb = other.to_rgb16();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            (0..3)
                .map(|c| {
                    Field2::from_fn(w, h, |x, y| {
                        rgb.get_pixel(x as u32, y as u32).0[c] as f64 / 65535.0
                    })
                })
                .collect()
        }
    };
    Ok(planes)
}

fn write_png_frame(path: &Path, planes: &[&Field2]) -> Result<(), CliError> {
    let w = planes[0].width() as u32;
    let h = planes[0].height() as u32;
    let quant = |v: f64| ((v.clamp(0.0, 1.0) * 65535.0 + 0.5).floor()).min(65535.0) as u16;
    match planes.len() {
        1 => {
            let img = image::ImageBuffer::from_fn(w, h, |x, y| {
                image::Luma([quant(planes[0].get(x as usize, y as usize))])
            });
            image::DynamicImage::ImageLuma16(img)
                .save(path)
                .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
        }
        3 => {
            let img = image::ImageBuffer::from_fn(w, h, |x, y| {
                image::Rgb([
                    quant(planes[0].get(x as usize, y as usize)),
                    quant(planes[1].get(x as usize, y as usize)),
                    quant(planes[2].get(x as usize, y as usize)),
                ])
            });
            image::DynamicImage::ImageRgb16(img)
                .save(path)
                .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
        }
        n => Err(CliError::data(format!(
            "{}: cannot encode {n} channels as PNG",
            path.display()
        ))),
    }
}

/// Read a whole sequence directory into memory.
pub fn read_sequence(dir: &Path) -> Result<ImageSequence, CliError> {
    let files = scan_frames(dir)?;
    let mut planes: Vec<Field2> = Vec::new();
    let mut dims: Option<(usize, usize, usize)> = None;
    for path in &files {
        let frame = match path.extension().and_then(|e| e.to_str()) {
            Some("png") => read_png_frame(path)?,
            _ => pnm::read_frame(path)?.0,
        };
        let d = (frame[0].width(), frame[0].height(), frame.len());
        match dims {
            None => dims = Some(d),
            Some(expect) => {
                if expect != d {
                    return Err(CliError::data(format!(
                        "{}: frame is {}x{}x{} but the sequence started as {}x{}x{}",
                        path.display(),
                        d.0,
                        d.1,
                        d.2,
                        expect.0,
                        expect.1,
                        expect.2
                    )));
                }
            }
        }
        planes.extend(frame);
    }
    let (w, h, c) = dims.unwrap();
    ImageSequence::from_planes(w, h, files.len(), c, planes)
        .map_err(|e| CliError::data(e.to_string()))
}

/// Write a sequence as numbered frames `frame_0000.<ext>` .. in `dir`.
pub fn write_sequence(
    dir: &Path,
    u: &ImageSequence,
    format: FrameFormat,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    for t in 0..u.frames() {
        let planes: Vec<&Field2> = (0..u.channels()).map(|c| u.plane(t, c)).collect();
        let path = dir.join(format!("frame_{t:04}.{}", format.extension()));
        match format {
            FrameFormat::Pgm8 | FrameFormat::Ppm8 => pnm::write_frame(&path, &planes, 255)?,
            FrameFormat::Pgm16 | FrameFormat::Ppm16 => pnm::write_frame(&path, &planes, 65535)?,
            FrameFormat::Png => write_png_frame(&path, &planes)?,
        }
    }
    Ok(())
}

/// Read a mask directory (PGM frames, nonzero means missing).
pub fn read_mask(dir: &Path) -> Result<Mask, CliError> {
    let files = scan_frames(dir)?;
    let mut dims: Option<(usize, usize)> = None;
    let mut frames = Vec::with_capacity(files.len());
    for path in &files {
        let (rows, w, h) = pnm::read_mask_frame(path)?;
        match dims {
            None => dims = Some((w, h)),
            Some(expect) => {
                if expect != (w, h) {
                    return Err(CliError::data(format!(
                        "{}: mask frame is {w}x{h}, expected {}x{}",
                        path.display(),
                        expect.0,
                        expect.1
                    )));
                }
            }
        }
        frames.push(rows);
    }
    let (w, h) = dims.unwrap();
    Ok(Mask::from_fn(w, h, files.len(), |x, y, t| frames[t][y][x]))
}

pub fn write_mask(dir: &Path, mask: &Mask) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    for t in 0..mask.frames() {
        let path = dir.join(format!("frame_{t:04}.pgm"));
        pnm::write_mask_frame(&path, |x, y| mask.missing(x, y, t), mask.width(), mask.height())?;
    }
    Ok(())
}

pub use flo::{read_flow, write_flow};
