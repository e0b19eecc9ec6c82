//! Pyramid construction, cross-level resampling of images, masks, and
//! flows, the motion-adaptive coarsest-level fill, and the interleaved
//! coarse-to-fine recovery pipeline.

use crate::energy::{CouplingTerm, EnergyConfig, RecoveryMode, Transport};
use crate::error::{Error, Result};
use crate::flow::{backward_flow, solve_flow, FlowSolverParams};
use crate::grid::{Field2, FlowDirection, FlowField, ImageSequence, Mask};
use crate::solver::inpaint_level;

/// Pyramid geometry. The temporal extent is never downsampled; levels are
/// spatial only, with level 0 the input resolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PyramidSpec {
    /// Number of levels, including level 0.
    pub levels: usize,
    /// Per-axis size ratio between consecutive levels, in (0, 1).
    pub scale_factor: f64,
}

impl Default for PyramidSpec {
    fn default() -> Self {
        PyramidSpec {
            levels: 4,
            scale_factor: 0.5,
        }
    }
}

pub const MIN_LEVEL_SIZE: usize = 8;

impl PyramidSpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::config("pyramid needs at least one level"));
        }
        if !(self.scale_factor > 0.0 && self.scale_factor < 1.0) {
            return Err(Error::config("scale_factor must be in (0, 1)"));
        }
        Ok(())
    }

    /// Level dimensions, finest first.
    pub fn level_sizes(&self, width: usize, height: usize) -> Result<Vec<(usize, usize)>> {
        self.validate()?;
        let mut sizes = Vec::with_capacity(self.levels);
        for l in 0..self.levels {
            let f = self.scale_factor.powi(l as i32);
            let w = (width as f64 * f).round() as usize;
            let h = (height as f64 * f).round() as usize;
            if l > 0 && (w < MIN_LEVEL_SIZE || h < MIN_LEVEL_SIZE) {
                return Err(Error::LevelTooSmall {
                    level: l,
                    width: w,
                    height: h,
                    min: MIN_LEVEL_SIZE,
                });
            }
            sizes.push((w, h));
        }
        Ok(sizes)
    }
}

/// Binary mask coarsening strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskCoarsening {
    /// Copy the nearest fine pixel's flag. Keeps the locus small.
    Nearest,
    /// Mark a coarse pixel missing when any fine pixel contributing to its
    /// low-passed value is missing. Safe side, grows the locus.
    Threshold,
}

/// One resolution level of the problem.
#[derive(Clone, Debug)]
pub struct PyramidLevel {
    pub level: usize,
    pub image: ImageSequence,
    pub mask: Mask,
}

/// Separable Gaussian blur with replicated borders; sigma <= 0 is identity.
fn gaussian_blur(f: &Field2, sigma: f64) -> Field2 {
    if sigma <= 0.0 {
        return f.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for i in -radius..=radius {
        kernel.push((-(i * i) as f64 * inv).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }
    let w = f.width() as isize;
    let h = f.height() as isize;
    let mut tmp = Field2::zeros(f.width(), f.height());
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let xx = (x + i as isize - radius).clamp(0, w - 1);
                acc += k * f.get(xx as usize, y as usize);
            }
            tmp.set(x as usize, y as usize, acc);
        }
    }
    let mut out = Field2::zeros(f.width(), f.height());
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let yy = (y + i as isize - radius).clamp(0, h - 1);
                acc += k * tmp.get(x as usize, yy as usize);
            }
            out.set(x as usize, y as usize, acc);
        }
    }
    out
}

/// Bilinear resampling with center-aligned coordinate mapping.
fn resample_bilinear(f: &Field2, tw: usize, th: usize) -> Field2 {
    let sx = f.width() as f64 / tw as f64;
    let sy = f.height() as f64 / th as f64;
    let policy = crate::grid::SamplePolicy::bilinear();
    Field2::from_fn(tw, th, |x, y| {
        let fx = (x as f64 + 0.5) * sx - 0.5;
        let fy = (y as f64 + 0.5) * sy - 0.5;
        f.sample(fx, fy, policy)
    })
}

/// Anti-alias stddev for a per-axis downsampling ratio in (0, 1].
fn smoothing_sigma(ratio: f64) -> f64 {
    if ratio >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 / ratio - 1.0)
    }
}

fn downsample_image(u: &ImageSequence, tw: usize, th: usize) -> ImageSequence {
    let sigma_x = smoothing_sigma(tw as f64 / u.width() as f64);
    let sigma_y = smoothing_sigma(th as f64 / u.height() as f64);
    let mut planes = Vec::with_capacity(u.frames() * u.channels());
    for t in 0..u.frames() {
        for c in 0..u.channels() {
            let blurred = if sigma_x == sigma_y {
                gaussian_blur(u.plane(t, c), sigma_x)
            } else {
                // separable blur with per-axis sigmas
                let gx = gaussian_blur_axis(u.plane(t, c), sigma_x, true);
                gaussian_blur_axis(&gx, sigma_y, false)
            };
            planes.push(resample_bilinear(&blurred, tw, th));
        }
    }
    ImageSequence::from_planes(tw, th, u.frames(), u.channels(), planes).expect("shapes agree")
}

fn gaussian_blur_axis(f: &Field2, sigma: f64, horizontal: bool) -> Field2 {
    if sigma <= 0.0 {
        return f.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for i in -radius..=radius {
        kernel.push((-(i * i) as f64 * inv).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }
    let w = f.width() as isize;
    let h = f.height() as isize;
    let mut out = Field2::zeros(f.width(), f.height());
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let o = i as isize - radius;
                let (xx, yy) = if horizontal {
                    ((x + o).clamp(0, w - 1), y)
                } else {
                    (x, (y + o).clamp(0, h - 1))
                };
                acc += k * f.get(xx as usize, yy as usize);
            }
            out.set(x as usize, y as usize, acc);
        }
    }
    out
}

/// Coarsen a mask to the target size. Both methods return a strictly
/// binary mask; with `Nearest` every missing coarse pixel copies a missing
/// fine pixel.
pub fn coarsen_mask(mask: &Mask, tw: usize, th: usize, method: MaskCoarsening) -> Mask {
    match method {
        MaskCoarsening::Nearest => {
            let sx = mask.width() as f64 / tw as f64;
            let sy = mask.height() as f64 / th as f64;
            Mask::from_fn(tw, th, mask.frames(), |x, y, t| {
                let fx = ((x as f64 + 0.5) * sx - 0.5)
                    .round()
                    .clamp(0.0, mask.width() as f64 - 1.0) as usize;
                let fy = ((y as f64 + 0.5) * sy - 0.5)
                    .round()
                    .clamp(0.0, mask.height() as f64 - 1.0) as usize;
                mask.missing(fx, fy, t)
            })
        }
        MaskCoarsening::Threshold => {
            // Low-pass the known-data indicator; any contribution from a
            // missing pixel pulls the coarse value below one.
            let sigma_x = smoothing_sigma(tw as f64 / mask.width() as f64);
            let sigma_y = smoothing_sigma(th as f64 / mask.height() as f64);
            let mut out = Mask::new_empty(tw, th, mask.frames());
            for t in 0..mask.frames() {
                let ind = Field2::from_fn(mask.width(), mask.height(), |x, y| {
                    if mask.missing(x, y, t) {
                        0.0
                    } else {
                        1.0
                    }
                });
                let gx = gaussian_blur_axis(&ind, sigma_x, true);
                let blurred = gaussian_blur_axis(&gx, sigma_y, false);
                let small = resample_bilinear(&blurred, tw, th);
                for y in 0..th {
                    for x in 0..tw {
                        if small.get(x, y) < 1.0 - 1e-9 {
                            out.set(x, y, t, true);
                        }
                    }
                }
            }
            out
        }
    }
}

/// Build all levels, finest first. Images are blurred then resampled;
/// masks are coarsened with the chosen method; each level derives from the
/// previous one.
pub fn build_pyramid(
    u0: &ImageSequence,
    mask: &Mask,
    spec: &PyramidSpec,
    method: MaskCoarsening,
) -> Result<Vec<PyramidLevel>> {
    if !mask.same_grid(u0) {
        return Err(Error::dims("pyramid mask shape"));
    }
    let sizes = spec.level_sizes(u0.width(), u0.height())?;
    let mut levels = Vec::with_capacity(sizes.len());
    levels.push(PyramidLevel {
        level: 0,
        image: u0.clone(),
        mask: mask.clone(),
    });
    for (l, &(w, h)) in sizes.iter().enumerate().skip(1) {
        let prev = &levels[l - 1];
        let image = downsample_image(&prev.image, w, h);
        let mask = coarsen_mask(&prev.mask, w, h, method);
        levels.push(PyramidLevel { level: l, image, mask });
    }
    Ok(levels)
}

/// Bilinear flow upsampling: interpolate components on the target grid,
/// then rescale displacements by the per-axis size ratio.
pub fn upsample_flow(v: &FlowField, tw: usize, th: usize) -> FlowField {
    let rx = tw as f64 / v.width() as f64;
    let ry = th as f64 / v.height() as f64;
    let mut out = FlowField::zeros(tw, th, v.frames(), v.direction());
    for k in 0..v.num_slices() {
        let src = v.raw_slice(k);
        let x = resample_bilinear(&src.x, tw, th);
        let y = resample_bilinear(&src.y, tw, th);
        let dst = out.raw_slice_mut(k);
        for yy in 0..th {
            for xx in 0..tw {
                dst.set(xx, yy, (x.get(xx, yy) * rx, y.get(xx, yy) * ry));
            }
        }
    }
    out
}

/// Plain bilinear image upsampling (the inpaint-denoise cross-level
/// transfer).
pub fn upsample_image(u: &ImageSequence, tw: usize, th: usize) -> ImageSequence {
    let mut planes = Vec::with_capacity(u.frames() * u.channels());
    for t in 0..u.frames() {
        for c in 0..u.channels() {
            planes.push(resample_bilinear(u.plane(t, c), tw, th));
        }
    }
    ImageSequence::from_planes(tw, th, u.frames(), u.channels(), planes).expect("shapes agree")
}

/// Pure-inpaint cross-level transfer: bilinear upsampling inside the
/// missing locus, the level's own observed values outside, bit for bit.
pub fn upsample_image_pure_inpaint(
    coarse: &ImageSequence,
    u0_level: &ImageSequence,
    mask_level: &Mask,
) -> Result<ImageSequence> {
    if !mask_level.same_grid(u0_level) {
        return Err(Error::dims("pure-inpaint upsample shapes"));
    }
    let mut up = upsample_image(coarse, u0_level.width(), u0_level.height());
    if up.frames() != u0_level.frames() || up.channels() != u0_level.channels() {
        return Err(Error::dims("pure-inpaint upsample frames/channels"));
    }
    for t in 0..up.frames() {
        for c in 0..up.channels() {
            for y in 0..up.height() {
                for x in 0..up.width() {
                    if !mask_level.missing(x, y, t) {
                        up.set(x, y, t, c, u0_level.get(x, y, t, c));
                    }
                }
            }
        }
    }
    Ok(up)
}

/// Fill per-frame missing pixels with the mean of that frame's known
/// pixels (0.5 when a frame is fully missing). Cheap deterministic seed for
/// the coarsest-level descent.
fn seed_fill(u0: &ImageSequence, mask: &Mask) -> ImageSequence {
    let mut out = u0.clone();
    for t in 0..u0.frames() {
        for c in 0..u0.channels() {
            let mut sum = 0.0;
            let mut n = 0usize;
            for y in 0..u0.height() {
                for x in 0..u0.width() {
                    if !mask.missing(x, y, t) {
                        sum += u0.get(x, y, t, c);
                        n += 1;
                    }
                }
            }
            let fill = if n == 0 { 0.5 } else { sum / n as f64 };
            for y in 0..u0.height() {
                for x in 0..u0.width() {
                    if mask.missing(x, y, t) {
                        out.set(x, y, t, c, fill);
                    }
                }
            }
        }
    }
    out
}

/// Motion-adaptive fill at the coarsest level: descent on the missing
/// locus with the spatial term plus the zero-flow brightness coupling,
/// whose nonlinearity adapts the temporal diffusion to motion. Known
/// pixels are untouched.
pub fn coarsest_inpaint(
    u0: &ImageSequence,
    mask: &Mask,
    config: &EnergyConfig,
    iterations: usize,
) -> Result<(ImageSequence, Vec<f64>)> {
    let mut cfg = config.clone();
    cfg.mode = RecoveryMode::PureInpaint;
    cfg.coupling = CouplingTerm::Brightness;
    cfg.transport = Transport::Off;
    let zero_fwd = FlowField::zeros(u0.width(), u0.height(), u0.frames(), FlowDirection::Forward);
    let zero_bwd = FlowField::zeros(u0.width(), u0.height(), u0.frames(), FlowDirection::Backward);
    let init = seed_fill(u0, mask);
    inpaint_level(init, u0, &zero_fwd, &zero_bwd, mask, &cfg, iterations)
}

/// Everything the full pipeline needs.
#[derive(Clone, Debug)]
pub struct PipelineParams {
    pub energy: EnergyConfig,
    pub flow: FlowSolverParams,
    pub pyramid: PyramidSpec,
    pub mask_coarsening: MaskCoarsening,
    /// Descent steps for the coarsest-level fill.
    pub coarsest_iterations: usize,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            energy: EnergyConfig::default(),
            flow: FlowSolverParams::default(),
            pyramid: PyramidSpec::default(),
            mask_coarsening: MaskCoarsening::Nearest,
            coarsest_iterations: 800,
        }
    }
}

impl PipelineParams {
    /// Flow parameters derived from the energy configuration: the split
    /// coupling reconstructs with separate penalties but estimates motion
    /// with the joint one.
    pub fn effective_flow(&self) -> FlowSolverParams {
        let mut f = self.flow.clone();
        if f.coupling == CouplingTerm::SplitGradient {
            f.coupling = CouplingTerm::BrightnessGradient;
        }
        f
    }
}

/// Result of a pipeline run: the reconstruction and the final flow pair at
/// level 0, plus one energy trace per inpainted level (coarsest first).
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub image: ImageSequence,
    pub forward: FlowField,
    pub backward: FlowField,
    pub level_traces: Vec<(usize, Vec<f64>)>,
}

/// Interleaved coarse-to-fine recovery: motion-adaptive fill at the
/// coarsest level, then per level downward a forward and backward flow
/// solve on the current reconstruction, flow and image upsampling, and an
/// image descent at the finer level; finally the flows are recomputed on
/// the finished level-0 image.
pub fn run_pipeline(
    u0: &ImageSequence,
    mask: &Mask,
    params: &PipelineParams,
) -> Result<PipelineOutput> {
    params.energy.validate()?;
    let flow_params = params.effective_flow();
    flow_params.validate()?;
    let levels = build_pyramid(u0, mask, &params.pyramid, params.mask_coarsening)?;
    let coarsest = levels.len() - 1;

    let mut traces = Vec::new();
    let (mut u, trace) = coarsest_inpaint(
        &levels[coarsest].image,
        &levels[coarsest].mask,
        &params.energy,
        params.coarsest_iterations,
    )?;
    traces.push((coarsest, trace));

    let mut vcur = FlowField::zeros(
        levels[coarsest].image.width(),
        levels[coarsest].image.height(),
        u0.frames(),
        FlowDirection::Forward,
    );
    for l in (0..coarsest).rev() {
        let level_params = flow_params_for_level(&flow_params, l + 1);
        vcur = solve_flow(&u, &vcur, &level_params)?;
        let wcur = backward_flow(&u, &vcur, &level_params)?;
        let (tw, th) = (levels[l].image.width(), levels[l].image.height());
        let vi = upsample_flow(&vcur, tw, th);
        let wi = upsample_flow(&wcur, tw, th);
        let init = match params.energy.mode {
            RecoveryMode::PureInpaint => {
                upsample_image_pure_inpaint(&u, &levels[l].image, &levels[l].mask)?
            }
            RecoveryMode::InpaintDenoise => upsample_image(&u, tw, th),
        };
        let (next, trace) = inpaint_level(
            init,
            &levels[l].image,
            &vi,
            &wi,
            &levels[l].mask,
            &params.energy,
            params.energy.iterations,
        )?;
        traces.push((l, trace));
        u = next;
        vcur = vi;
    }

    let level0 = flow_params_for_level(&flow_params, 0);
    let forward = solve_flow(&u, &vcur, &level0)?;
    let backward = backward_flow(&u, &forward, &level0)?;
    u.clamp_unit_range();
    Ok(PipelineOutput {
        image: u,
        forward,
        backward,
        level_traces: traces,
    })
}

/// Per-level flow solver schedule: coarse levels are cheap and need the
/// longest travel, so the iteration count doubles at each coarser level.
fn flow_params_for_level(base: &FlowSolverParams, level: usize) -> FlowSolverParams {
    let mut p = base.clone();
    p.iterations = base.iterations.saturating_mul(1 << level.min(4));
    p
}

/// Coarse-to-fine flow estimation alone (no reconstruction): the pipeline
/// skeleton run on the sequence as-is.
pub fn estimate_flow(
    u: &ImageSequence,
    spec: &PyramidSpec,
    params: &FlowSolverParams,
) -> Result<(FlowField, FlowField)> {
    params.validate()?;
    let mask = Mask::new_empty(u.width(), u.height(), u.frames());
    let levels = build_pyramid(u, &mask, spec, MaskCoarsening::Nearest)?;
    let coarsest = levels.len() - 1;
    let mut vcur = FlowField::zeros(
        levels[coarsest].image.width(),
        levels[coarsest].image.height(),
        u.frames(),
        FlowDirection::Forward,
    );
    for l in (0..levels.len()).rev() {
        if l < coarsest {
            vcur = upsample_flow(&vcur, levels[l].image.width(), levels[l].image.height());
        }
        vcur = solve_flow(&levels[l].image, &vcur, &flow_params_for_level(params, l))?;
    }
    let backward = backward_flow(u, &vcur, &flow_params_for_level(params, 0))?;
    Ok((vcur, backward))
}
