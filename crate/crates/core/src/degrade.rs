//! Synthetic degradation: polygonal blotches that may repeat across
//! consecutive frames, plus optional additive Gaussian noise. Deterministic
//! under a fixed seed; the returned mask is exactly the blotch support.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{ImageSequence, Mask};

/// How blotch interiors are filled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BlotchFill {
    Constant(f64),
    UniformNoise,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradationSpec {
    pub seed: u64,
    pub blotches_per_frame: usize,
    /// Inclusive range of polygon vertex counts.
    pub vertex_range: (usize, usize),
    /// Blotch radius range as a fraction of the smaller frame dimension.
    pub size_range: (f64, f64),
    /// Probability that a blotch repeats the previous frame's polygon,
    /// producing temporally overlapping damage.
    pub overlap_probability: f64,
    /// Additive Gaussian noise standard deviation as a fraction of the
    /// intensity range; zero disables noise.
    pub noise_stddev: f64,
    pub fill: BlotchFill,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        DegradationSpec {
            seed: 0,
            blotches_per_frame: 3,
            vertex_range: (4, 8),
            size_range: (0.06, 0.16),
            overlap_probability: 0.3,
            noise_stddev: 0.0,
            fill: BlotchFill::Constant(0.9),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradeReport {
    /// Fraction of spatiotemporal pixels inside the blotch support.
    pub degraded_fraction: f64,
}

#[derive(Clone)]
struct Polygon {
    vertices: Vec<(f64, f64)>,
}

impl Polygon {
    fn random(rng: &mut ChaCha8Rng, width: usize, height: usize, spec: &DegradationSpec) -> Self {
        let radius = rng.gen_range(spec.size_range.0..=spec.size_range.1)
            * width.min(height) as f64;
        let cx = rng.gen_range(0.0..width as f64);
        let cy = rng.gen_range(0.0..height as f64);
        let n = rng.gen_range(spec.vertex_range.0..=spec.vertex_range.1);
        let mut angles: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        angles.sort_by(f64::total_cmp);
        let vertices = angles
            .into_iter()
            .map(|a| {
                let r = radius * rng.gen_range(0.5..1.0);
                (cx + r * a.cos(), cy + r * a.sin())
            })
            .collect();
        Polygon { vertices }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut xmin = f64::INFINITY;
        let mut xmax = f64::NEG_INFINITY;
        let mut ymin = f64::INFINITY;
        let mut ymax = f64::NEG_INFINITY;
        for &(x, y) in &self.vertices {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
        (xmin, xmax, ymin, ymax)
    }

    /// Even-odd crossing test against pixel centers.
    fn contains(&self, px: f64, py: f64) -> bool {
        let mut inside = false;
        let n = self.vertices.len();
        let mut j = n - 1;
        for i in 0..n {
            let (xi, yi) = self.vertices[i];
            let (xj, yj) = self.vertices[j];
            if (yi > py) != (yj > py) {
                let cross = (xj - xi) * (py - yi) / (yj - yi) + xi;
                if px < cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// Pixels covered by the polygon, in row-major order.
    fn raster(&self, width: usize, height: usize) -> Vec<(usize, usize)> {
        let (xmin, xmax, ymin, ymax) = self.bounds();
        let x0 = xmin.floor().max(0.0) as usize;
        let x1 = (xmax.ceil() as isize).clamp(0, width as isize - 1) as usize;
        let y0 = ymin.floor().max(0.0) as usize;
        let y1 = (ymax.ceil() as isize).clamp(0, height as isize - 1) as usize;
        let mut out = Vec::new();
        for y in y0..=y1 {
            for x in x0..=x1 {
                if self.contains(x as f64, y as f64) {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// Blotch a sequence and optionally add noise. Returns the degraded copy,
/// the mask of the blotch support, and the degraded-fraction report.
pub fn degrade(
    u: &ImageSequence,
    spec: &DegradationSpec,
) -> Result<(ImageSequence, Mask, DegradeReport)> {
    if spec.vertex_range.0 < 3 || spec.vertex_range.0 > spec.vertex_range.1 {
        return Err(Error::config("vertex_range needs 3 <= lo <= hi"));
    }
    if !(spec.size_range.0 > 0.0 && spec.size_range.0 <= spec.size_range.1) {
        return Err(Error::config("size_range needs 0 < lo <= hi"));
    }
    if spec.size_range.0 * u.width().min(u.height()) as f64 > u.width().min(u.height()) as f64 {
        return Err(Error::config("blotch size exceeds the frame"));
    }
    if !(0.0..=1.0).contains(&spec.overlap_probability) {
        return Err(Error::config("overlap_probability must be in [0, 1]"));
    }
    if spec.noise_stddev < 0.0 {
        return Err(Error::config("noise_stddev must be >= 0"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = u.clone();
    let mut mask = Mask::new_empty(u.width(), u.height(), u.frames());

    let mut prev_frame: Vec<Polygon> = Vec::new();
    for t in 0..u.frames() {
        let mut this_frame: Vec<Polygon> = Vec::new();
        for _ in 0..spec.blotches_per_frame {
            let poly = if !prev_frame.is_empty() && rng.gen::<f64>() < spec.overlap_probability {
                let idx = rng.gen_range(0..prev_frame.len());
                prev_frame[idx].clone()
            } else {
                Polygon::random(&mut rng, u.width(), u.height(), spec)
            };
            for (x, y) in poly.raster(u.width(), u.height()) {
                mask.set(x, y, t, true);
                for c in 0..u.channels() {
                    let v = match spec.fill {
                        BlotchFill::Constant(f) => f,
                        BlotchFill::UniformNoise => rng.gen_range(0.0..1.0),
                    };
                    out.set(x, y, t, c, v.clamp(0.0, 1.0));
                }
            }
            this_frame.push(poly);
        }
        prev_frame = this_frame;
    }

    if spec.noise_stddev > 0.0 {
        let normal = Normal::new(0.0, spec.noise_stddev).expect("valid stddev");
        for t in 0..u.frames() {
            for c in 0..u.channels() {
                for y in 0..u.height() {
                    for x in 0..u.width() {
                        let v = out.get(x, y, t, c) + normal.sample(&mut rng);
                        out.set(x, y, t, c, v.clamp(0.0, 1.0));
                    }
                }
            }
        }
    }

    let total = (u.width() * u.height() * u.frames()) as f64;
    let report = DegradeReport {
        degraded_fraction: mask.count_missing() as f64 / total,
    };
    Ok((out, mask, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{translating_sequence, BlobTexture};

    fn base() -> ImageSequence {
        let tex = BlobTexture::random(32, 32, 20, 11);
        translating_sequence(32, 32, 4, (0.5, 0.0), &tex)
    }

    #[test]
    fn no_blotches_no_noise_is_identity() {
        let u = base();
        let spec = DegradationSpec {
            blotches_per_frame: 0,
            noise_stddev: 0.0,
            ..DegradationSpec::default()
        };
        let (d, m, r) = degrade(&u, &spec).unwrap();
        assert_eq!(d, u);
        assert!(!m.any_missing());
        assert_eq!(r.degraded_fraction, 0.0);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let u = base();
        let spec = DegradationSpec {
            seed: 42,
            noise_stddev: 0.05,
            ..DegradationSpec::default()
        };
        let (d1, m1, _) = degrade(&u, &spec).unwrap();
        let (d2, m2, _) = degrade(&u, &spec).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn mask_equals_blotch_support_and_covers_changes() {
        let u = base();
        let spec = DegradationSpec {
            seed: 5,
            fill: BlotchFill::Constant(0.9),
            noise_stddev: 0.0,
            ..DegradationSpec::default()
        };
        let (d, m, _) = degrade(&u, &spec).unwrap();
        for t in 0..u.frames() {
            for y in 0..u.height() {
                for x in 0..u.width() {
                    let changed = d.get(x, y, t, 0) != u.get(x, y, t, 0);
                    if changed {
                        assert!(m.missing(x, y, t), "changed pixel outside mask");
                    }
                    if m.missing(x, y, t) {
                        assert_eq!(d.get(x, y, t, 0), 0.9);
                    }
                }
            }
        }
    }

    #[test]
    fn coverage_target_holds_over_seeds() {
        let tex = BlobTexture::random(64, 64, 30, 3);
        let u = translating_sequence(64, 64, 8, (1.0, 0.0), &tex);
        let mut fractions = Vec::new();
        for seed in 0..8u64 {
            let spec = DegradationSpec {
                seed,
                blotches_per_frame: 3,
                size_range: (0.12, 0.19),
                ..DegradationSpec::default()
            };
            let (_, _, r) = degrade(&u, &spec).unwrap();
            fractions.push(r.degraded_fraction);
        }
        let mean: f64 = fractions.iter().sum::<f64>() / fractions.len() as f64;
        assert!(
            (0.04..=0.08).contains(&mean),
            "mean coverage {mean:.4} from {fractions:?}"
        );
    }
}
