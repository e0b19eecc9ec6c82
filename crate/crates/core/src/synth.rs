//! Synthetic ground-truth sequences and displacement fields for testing
//! and benchmarking: a smooth analytic texture moved by exact translations
//! or rotations, with the matching forward and backward fields.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::grid::{FlowDirection, FlowField, ImageSequence};

/// Smooth analytic texture: a bounded sum of Gaussian bumps around a mid
/// gray. Values stay inside [0.05, 0.95] and can be evaluated at any real
/// coordinate, so warped copies of the texture are exact by construction.
#[derive(Clone, Debug)]
pub struct BlobTexture {
    blobs: Vec<(f64, f64, f64, f64)>, // cx, cy, inv_two_sigma_sq, amplitude
}

impl BlobTexture {
    pub fn random(width: usize, height: usize, blob_count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blobs = Vec::with_capacity(blob_count);
        for _ in 0..blob_count {
            let cx = rng.gen_range(0.0..width as f64);
            let cy = rng.gen_range(0.0..height as f64);
            let sigma = rng.gen_range(1.2..3.5);
            // strong local contrast; the clamp in eval bounds overlaps
            let amp = rng.gen_range(0.12..0.38) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
            blobs.push((cx, cy, 1.0 / (2.0 * sigma * sigma), amp));
        }
        BlobTexture { blobs }
    }

    /// Texture value at an arbitrary real coordinate.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut v = 0.5;
        for &(cx, cy, inv, amp) in &self.blobs {
            let dx = x - cx;
            let dy = y - cy;
            v += amp * (-(dx * dx + dy * dy) * inv).exp();
        }
        v.clamp(0.0, 1.0)
    }
}

/// Sequence whose frame `k` shows the texture translated by `k * shift`.
pub fn translating_sequence(
    width: usize,
    height: usize,
    frames: usize,
    shift: (f64, f64),
    texture: &BlobTexture,
) -> ImageSequence {
    ImageSequence::from_fn(width, height, frames, 1, |x, y, t, _| {
        texture.eval(
            x as f64 - t as f64 * shift.0,
            y as f64 - t as f64 * shift.1,
        )
    })
}

/// Exact forward and backward displacement fields of a uniform translation.
pub fn translation_flow(
    width: usize,
    height: usize,
    frames: usize,
    shift: (f64, f64),
) -> (FlowField, FlowField) {
    let mut fwd = FlowField::zeros(width, height, frames, FlowDirection::Forward);
    for k in 0..frames - 1 {
        let s = fwd.slice_mut(k).unwrap();
        for y in 0..height {
            for x in 0..width {
                s.set(x, y, shift);
            }
        }
    }
    let mut bwd = FlowField::zeros(width, height, frames, FlowDirection::Backward);
    for k in 1..frames {
        let s = bwd.slice_mut(k).unwrap();
        for y in 0..height {
            for x in 0..width {
                s.set(x, y, shift);
            }
        }
    }
    (fwd, bwd)
}

/// Sequence whose frame `k` shows the texture rotated by `k * theta`
/// radians about `center`.
pub fn rotating_sequence(
    width: usize,
    height: usize,
    frames: usize,
    theta: f64,
    center: (f64, f64),
    texture: &BlobTexture,
) -> ImageSequence {
    ImageSequence::from_fn(width, height, frames, 1, |x, y, t, _| {
        let a = -(t as f64) * theta;
        let (sin, cos) = a.sin_cos();
        let dx = x as f64 - center.0;
        let dy = y as f64 - center.1;
        texture.eval(
            center.0 + cos * dx - sin * dy,
            center.1 + sin * dx + cos * dy,
        )
    })
}

/// Exact displacement fields of a rigid rotation by `theta` per frame:
/// forward `R_theta(x - c) - (x - c)`, backward `(x - c) - R_{-theta}(x - c)`.
pub fn rotation_flow(
    width: usize,
    height: usize,
    frames: usize,
    theta: f64,
    center: (f64, f64),
) -> (FlowField, FlowField) {
    let (sin, cos) = theta.sin_cos();
    let mut fwd = FlowField::zeros(width, height, frames, FlowDirection::Forward);
    for k in 0..frames - 1 {
        let s = fwd.slice_mut(k).unwrap();
        for y in 0..height {
            for x in 0..width {
                let dx = x as f64 - center.0;
                let dy = y as f64 - center.1;
                s.set(x, y, (cos * dx - sin * dy - dx, sin * dx + cos * dy - dy));
            }
        }
    }
    let (sinb, cosb) = (-theta).sin_cos();
    let mut bwd = FlowField::zeros(width, height, frames, FlowDirection::Backward);
    for k in 1..frames {
        let s = bwd.slice_mut(k).unwrap();
        for y in 0..height {
            for x in 0..width {
                let dx = x as f64 - center.0;
                let dy = y as f64 - center.1;
                s.set(
                    x,
                    y,
                    (dx - (cosb * dx - sinb * dy), dy - (sinb * dx + cosb * dy)),
                );
            }
        }
    }
    (fwd, bwd)
}
