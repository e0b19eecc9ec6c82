//! Explicit gradient-descent image solver for a single resolution level,
//! with per-step energy monitoring.

use crate::energy::{
    data_gradient, temporal_gradient, total_energy, tv_gradient, EnergyConfig, RecoveryMode,
};
use crate::error::{Error, Result};
use crate::grid::{FlowField, ImageSequence, Mask};

/// Descent iterate plus its energy history. In pure-inpaint mode the
/// iterate equals the observation outside the missing locus, bit for bit,
/// at every iteration; the trace always holds `iteration + 1` entries.
#[derive(Clone, Debug)]
pub struct DescentState {
    pub iterate: ImageSequence,
    pub iteration: usize,
    pub energy_trace: Vec<f64>,
}

impl DescentState {
    /// Seed a descent from an initial guess. Pure inpainting overwrites the
    /// guess with the observation outside the missing locus so the hard
    /// constraint holds from step zero.
    pub fn new(
        init: ImageSequence,
        u0: &ImageSequence,
        vfwd: &FlowField,
        mask: &Mask,
        config: &EnergyConfig,
    ) -> Result<Self> {
        config.validate()?;
        if !init.same_shape(u0) || !mask.same_grid(&init) {
            return Err(Error::dims("descent state shapes"));
        }
        let mut iterate = init;
        if config.mode == RecoveryMode::PureInpaint {
            clamp_to_observation(&mut iterate, u0, mask);
        }
        let e0 = total_energy(&iterate, u0, vfwd, mask, config)?;
        Ok(DescentState {
            iterate,
            iteration: 0,
            energy_trace: vec![e0],
        })
    }
}

fn clamp_to_observation(u: &mut ImageSequence, u0: &ImageSequence, mask: &Mask) {
    for t in 0..u.frames() {
        for c in 0..u.channels() {
            for y in 0..u.height() {
                for x in 0..u.width() {
                    if !mask.missing(x, y, t) {
                        u.set(x, y, t, c, u0.get(x, y, t, c));
                    }
                }
            }
        }
    }
}

/// One explicit Euler step `u <- u - dtau * grad(E)`. Pure inpainting
/// updates the missing locus only; inpaint-denoise updates the full grid
/// and includes the data term. Produces an error naming the first location
/// at which a non-finite value appears.
pub fn descent_step(
    state: DescentState,
    u0: &ImageSequence,
    vfwd: &FlowField,
    wbwd: &FlowField,
    mask: &Mask,
    config: &EnergyConfig,
) -> Result<DescentState> {
    let DescentState {
        mut iterate,
        iteration,
        mut energy_trace,
    } = state;
    let denoise = config.mode == RecoveryMode::InpaintDenoise;

    let g_data = if denoise && config.lambda1 != 0.0 {
        Some(data_gradient(&iterate, u0, mask)?)
    } else {
        None
    };
    let g_tv = if config.lambda2 != 0.0 {
        Some(tv_gradient(&iterate, mask, config.mode, &config.penalty)?)
    } else {
        None
    };
    let g_temporal = if config.lambda3 != 0.0 && iterate.frames() > 1 {
        Some(temporal_gradient(&iterate, vfwd, wbwd, mask, config)?)
    } else {
        None
    };

    for t in 0..iterate.frames() {
        for c in 0..iterate.channels() {
            for y in 0..iterate.height() {
                for x in 0..iterate.width() {
                    if !denoise && !mask.missing(x, y, t) {
                        continue;
                    }
                    let mut g = 0.0;
                    if let Some(gd) = &g_data {
                        g += config.lambda1 * gd.get(x, y, t, c);
                    }
                    if let Some(gt) = &g_tv {
                        g += config.lambda2 * gt.get(x, y, t, c);
                    }
                    if let Some(gl) = &g_temporal {
                        g += config.lambda3 * gl.get(x, y, t, c);
                    }
                    let next = iterate.get(x, y, t, c) - config.dtau * g;
                    if !next.is_finite() {
                        return Err(Error::NonFinite {
                            x,
                            y,
                            frame: t,
                            channel: c,
                        });
                    }
                    iterate.set(x, y, t, c, next);
                }
            }
        }
    }

    let e = total_energy(&iterate, u0, vfwd, mask, config)?;
    energy_trace.push(e);
    Ok(DescentState {
        iterate,
        iteration: iteration + 1,
        energy_trace,
    })
}

/// Run `iterations` descent steps and return the final iterate with its
/// energy trace.
pub fn inpaint_level(
    init: ImageSequence,
    u0: &ImageSequence,
    vfwd: &FlowField,
    wbwd: &FlowField,
    mask: &Mask,
    config: &EnergyConfig,
    iterations: usize,
) -> Result<(ImageSequence, Vec<f64>)> {
    let mut state = DescentState::new(init, u0, vfwd, mask, config)?;
    for _ in 0..iterations {
        state = descent_step(state, u0, vfwd, wbwd, mask, config)?;
    }
    Ok((state.iterate, state.energy_trace))
}
