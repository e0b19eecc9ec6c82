//! Restoration and flow quality measures.

use crate::error::{Error, Result};
use crate::grid::{FlowField, ImageSequence, Mask};

/// MSE/PSNR split by region, plus the largest absolute difference.
/// PSNR assumes a unit intensity range; a zero-MSE region reports infinity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageMetrics {
    pub mse_missing: f64,
    pub psnr_missing: f64,
    pub mse_known: f64,
    pub psnr_known: f64,
    pub mse_global: f64,
    pub psnr_global: f64,
    pub max_abs_diff: f64,
}

pub fn psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn image_metrics(
    restored: &ImageSequence,
    reference: &ImageSequence,
    mask: &Mask,
) -> Result<ImageMetrics> {
    if !restored.same_shape(reference) || !mask.same_grid(restored) {
        return Err(Error::dims("image_metrics shapes"));
    }
    let mut sums = [0.0f64; 2]; // missing, known
    let mut counts = [0usize; 2];
    let mut max_abs = 0.0f64;
    for t in 0..restored.frames() {
        for c in 0..restored.channels() {
            for y in 0..restored.height() {
                for x in 0..restored.width() {
                    let d = restored.get(x, y, t, c) - reference.get(x, y, t, c);
                    let region = if mask.missing(x, y, t) { 0 } else { 1 };
                    sums[region] += d * d;
                    counts[region] += 1;
                    max_abs = max_abs.max(d.abs());
                }
            }
        }
    }
    let mse = |i: usize| {
        if counts[i] == 0 {
            0.0
        } else {
            sums[i] / counts[i] as f64
        }
    };
    let total = counts[0] + counts[1];
    let mse_global = if total == 0 {
        0.0
    } else {
        (sums[0] + sums[1]) / total as f64
    };
    Ok(ImageMetrics {
        mse_missing: mse(0),
        psnr_missing: psnr(mse(0)),
        mse_known: mse(1),
        psnr_known: psnr(mse(1)),
        mse_global,
        psnr_global: psnr(mse_global),
        max_abs_diff: max_abs,
    })
}

/// Mean endpoint error and mean angular error (degrees, space-time vector
/// convention) against a ground-truth field, over pixels at least
/// `border_margin` away from the frame border.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowMetrics {
    pub mean_endpoint_error: f64,
    pub mean_angular_error_deg: f64,
}

pub fn flow_metrics(
    estimate: &FlowField,
    truth: &FlowField,
    border_margin: usize,
) -> Result<FlowMetrics> {
    if estimate.width() != truth.width()
        || estimate.height() != truth.height()
        || estimate.num_slices() != truth.num_slices()
        || estimate.direction() != truth.direction()
    {
        return Err(Error::dims("flow_metrics shapes"));
    }
    let w = estimate.width();
    let h = estimate.height();
    if border_margin * 2 >= w || border_margin * 2 >= h {
        return Err(Error::dims("border margin leaves no interior"));
    }
    let mut epe = 0.0;
    let mut ang = 0.0;
    let mut count = 0usize;
    for k in 0..estimate.num_slices() {
        let se = estimate.raw_slice(k);
        let st = truth.raw_slice(k);
        for y in border_margin..h - border_margin {
            for x in border_margin..w - border_margin {
                let (ex, ey) = se.get(x, y);
                let (tx, ty) = st.get(x, y);
                epe += ((ex - tx).powi(2) + (ey - ty).powi(2)).sqrt();
                let num = ex * tx + ey * ty + 1.0;
                let den = ((ex * ex + ey * ey + 1.0) * (tx * tx + ty * ty + 1.0)).sqrt();
                ang += (num / den).clamp(-1.0, 1.0).acos().to_degrees();
                count += 1;
            }
        }
    }
    let n = count.max(1) as f64;
    Ok(FlowMetrics {
        mean_endpoint_error: epe / n,
        mean_angular_error_deg: ang / n,
    })
}
