//! The robust penalty, diffusivity coefficient fields, image-side energy
//! gradients, and the total energy evaluator.
//!
//! All energies are written as `1/2 * sum(penalty(...))` so that the
//! analytic gradients below are the exact derivatives of the evaluated
//! sums: central finite differences of `total_energy` reproduce every
//! gradient here to roundoff given matching flows.

use crate::error::{Error, Result};
use crate::grid::{
    flow_divergence_correction, lie_backward, lie_forward, spatial_gradient, Field2, FlowDirection,
    FlowField, ImageSequence, Mask, SamplePolicy, VecField2,
};
use crate::halfpoint;
use crate::{flow, grid};

/// Differentiable total-variation surrogate `phi(s) = sqrt(s + eps^2)` over
/// squared magnitudes `s >= 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Penalty {
    epsilon: f64,
}

impl Penalty {
    pub fn new(epsilon: f64) -> Self {
        assert!(epsilon > 0.0, "penalty needs a positive epsilon");
        Penalty { epsilon }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `phi(s)`.
    #[inline]
    pub fn value(&self, s: f64) -> f64 {
        (s + self.epsilon * self.epsilon).sqrt()
    }

    /// `phi'(s)`, the diffusivity weight; lies in `(0, 1/(2 eps)]`.
    #[inline]
    pub fn diffusivity(&self, s: f64) -> f64 {
        0.5 / (s + self.epsilon * self.epsilon).sqrt()
    }
}

impl Default for Penalty {
    fn default() -> Self {
        Penalty::new(1e-3)
    }
}

/// Which intensity-motion coupling term drives reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CouplingTerm {
    /// Brightness constancy along flow lines.
    Brightness,
    /// Brightness and spatial-gradient constancy under one shared penalty.
    BrightnessGradient,
    /// Brightness and gradient constancy penalized separately.
    SplitGradient,
}

impl CouplingTerm {
    pub fn uses_gradients(self) -> bool {
        !matches!(self, CouplingTerm::Brightness)
    }
}

/// Flow regularizer shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmoothnessTerm {
    /// Independent penalty per flow component.
    PerComponent,
    /// One spatial penalty shared by both components.
    Shared,
    /// Shared penalty over spatiotemporal flow gradients.
    SpatioTemporal,
}

/// Handling of the flow-divergence transport part of the coupling gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transport {
    /// Drop it; the remaining flow-line diffusion is still a descent
    /// direction for near-parallel flows.
    Off,
    /// Average the forward and backward one-sided estimates. Known to be
    /// unstable under strongly divergent flows; kept for demonstration.
    Naive,
    /// Per pixel, keep only the side whose diffusivity signals the better
    /// match.
    BestMatch,
}

impl Transport {
    /// Stable default per coupling term.
    pub fn default_for(coupling: CouplingTerm) -> Transport {
        match coupling {
            CouplingTerm::Brightness => Transport::BestMatch,
            _ => Transport::Off,
        }
    }
}

/// Whether reconstruction is pinned to the observation outside the missing
/// locus or free with a data-fidelity term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecoveryMode {
    PureInpaint,
    InpaintDenoise,
}

/// Weights, term selection, and the image-descent step size.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub gamma: f64,
    pub coupling: CouplingTerm,
    pub smoothness: SmoothnessTerm,
    pub mode: RecoveryMode,
    pub transport: Transport,
    pub penalty: Penalty,
    pub policy: SamplePolicy,
    pub dtau: f64,
    pub iterations: usize,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig {
            lambda1: 20.0,
            lambda2: 0.1,
            lambda3: 1.0,
            lambda4: 0.2,
            gamma: 0.1,
            coupling: CouplingTerm::Brightness,
            smoothness: SmoothnessTerm::Shared,
            mode: RecoveryMode::PureInpaint,
            transport: Transport::BestMatch,
            penalty: Penalty::default(),
            policy: SamplePolicy::default(),
            dtau: 1e-3,
            iterations: 500,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("gamma", self.gamma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!("{name} must be finite and >= 0")));
            }
        }
        if self.mode == RecoveryMode::InpaintDenoise && self.lambda1 <= 0.0 {
            return Err(Error::config(
                "inpaint-denoise mode requires lambda1 > 0",
            ));
        }
        if !self.dtau.is_finite() || self.dtau < 0.0 {
            return Err(Error::config("dtau must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Which residual feeds a diffusivity coefficient field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualKind {
    /// Brightness residual only.
    Intensity,
    /// Brightness plus gamma-weighted gradient residual.
    IntensityGradient,
    /// Gradient residual only.
    Gradient,
}

/// Side of the flow-line stencil a coefficient belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowSide {
    Forward,
    Backward,
}

/// Gradient fields of every frame/channel, computed once per evaluation.
fn gradient_planes(u: &ImageSequence) -> Vec<Vec<VecField2>> {
    (0..u.frames())
        .map(|t| {
            (0..u.channels())
                .map(|c| spatial_gradient(u.plane(t, c)))
                .collect()
        })
        .collect()
}

/// Forward gradient-constancy residual at frame `k`:
/// `grad(u_{k+1})(x + v_k(x)) - grad(u_k)(x)` per channel, zero at domain
/// exits. The warped gradient interpolates the central-difference fields.
fn forward_gradient_residual(
    gplanes: &[Vec<VecField2>],
    v: &FlowField,
    k: usize,
    policy: SamplePolicy,
) -> Result<Vec<VecField2>> {
    let slice = v.slice(k)?;
    let w = v.width();
    let h = v.height();
    let mut out = Vec::with_capacity(gplanes[0].len());
    for c in 0..gplanes[0].len() {
        let cur = &gplanes[k][c];
        let next = &gplanes[k + 1][c];
        let mut r = VecField2::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = slice.get(x, y);
                let sx = x as f64 + dx;
                let sy = y as f64 + dy;
                if next.x.in_domain(sx, sy) {
                    r.set(
                        x,
                        y,
                        (
                            next.x.sample(sx, sy, policy) - cur.x.get(x, y),
                            next.y.sample(sx, sy, policy) - cur.y.get(x, y),
                        ),
                    );
                }
            }
        }
        out.push(r);
    }
    Ok(out)
}

fn backward_gradient_residual(
    gplanes: &[Vec<VecField2>],
    w: &FlowField,
    k: usize,
    policy: SamplePolicy,
) -> Result<Vec<VecField2>> {
    let slice = w.slice(k)?;
    let wd = w.width();
    let ht = w.height();
    let mut out = Vec::with_capacity(gplanes[0].len());
    for c in 0..gplanes[0].len() {
        let cur = &gplanes[k][c];
        let prev = &gplanes[k - 1][c];
        let mut r = VecField2::zeros(wd, ht);
        for y in 0..ht {
            for x in 0..wd {
                let (dx, dy) = slice.get(x, y);
                let sx = x as f64 - dx;
                let sy = y as f64 - dy;
                if prev.x.in_domain(sx, sy) {
                    r.set(
                        x,
                        y,
                        (
                            cur.x.get(x, y) - prev.x.sample(sx, sy, policy),
                            cur.y.get(x, y) - prev.y.sample(sx, sy, policy),
                        ),
                    );
                }
            }
        }
        out.push(r);
    }
    Ok(out)
}

/// Diffusivity coefficient field for frame `k` of the requested kind and
/// side. Channels are summed inside the penalty argument, so identically
/// repeated channels scale the argument by the channel count.
pub fn temporal_diffusivity(
    u: &ImageSequence,
    flow: &FlowField,
    k: usize,
    kind: ResidualKind,
    side: FlowSide,
    gamma: f64,
    penalty: &Penalty,
    policy: SamplePolicy,
) -> Result<Field2> {
    let expected = match side {
        FlowSide::Forward => FlowDirection::Forward,
        FlowSide::Backward => FlowDirection::Backward,
    };
    if flow.direction() != expected {
        return Err(Error::dims(format!(
            "temporal_diffusivity wants a {} flow",
            expected.name()
        )));
    }
    let scalar = match side {
        FlowSide::Forward => lie_forward(u, flow, k, policy)?,
        FlowSide::Backward => lie_backward(u, flow, k, policy)?,
    };
    let grads = if kind == ResidualKind::Intensity {
        None
    } else {
        let gplanes = gradient_planes(u);
        Some(match side {
            FlowSide::Forward => forward_gradient_residual(&gplanes, flow, k, policy)?,
            FlowSide::Backward => backward_gradient_residual(&gplanes, flow, k, policy)?,
        })
    };
    let w = u.width();
    let h = u.height();
    let mut out = Field2::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            if kind != ResidualKind::Gradient {
                for r in &scalar {
                    let v = r.get(x, y);
                    s += v * v;
                }
            }
            if let Some(g) = &grads {
                let weight = if kind == ResidualKind::IntensityGradient {
                    gamma
                } else {
                    1.0
                };
                let mut gs = 0.0;
                for r in g {
                    let (a, b) = r.get(x, y);
                    gs += a * a + b * b;
                }
                s += weight * gs;
            }
            out.set(x, y, penalty.diffusivity(s));
        }
    }
    Ok(out)
}

/// Data-fidelity gradient: `(u - u0)` outside the missing locus, zero
/// inside, per channel.
pub fn data_gradient(u: &ImageSequence, u0: &ImageSequence, mask: &Mask) -> Result<ImageSequence> {
    if !u.same_shape(u0) || !mask.same_grid(u) {
        return Err(Error::dims("data_gradient shapes"));
    }
    let mut out = ImageSequence::zeros(u.width(), u.height(), u.frames(), u.channels());
    for t in 0..u.frames() {
        for c in 0..u.channels() {
            for y in 0..u.height() {
                for x in 0..u.width() {
                    if !mask.missing(x, y, t) {
                        out.set(x, y, t, c, u.get(x, y, t, c) - u0.get(x, y, t, c));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Spatial TV gradient per frame, channels coupled through a shared
/// half-point diffusivity. Pure inpainting restricts it to the missing
/// locus; inpaint-denoise keeps the full domain.
pub fn tv_gradient(
    u: &ImageSequence,
    mask: &Mask,
    mode: RecoveryMode,
    penalty: &Penalty,
) -> Result<ImageSequence> {
    if !mask.same_grid(u) {
        return Err(Error::dims("tv_gradient shapes"));
    }
    let mut out = ImageSequence::zeros(u.width(), u.height(), u.frames(), u.channels());
    for t in 0..u.frames() {
        let planes: Vec<&Field2> = (0..u.channels()).map(|c| u.plane(t, c)).collect();
        let mut grads = halfpoint::tv2d_gradient(&planes, penalty);
        for (c, g) in grads.drain(..).enumerate() {
            let dst = out.plane_mut(t, c);
            *dst = g;
            if mode == RecoveryMode::PureInpaint {
                for y in 0..mask.height() {
                    for x in 0..mask.width() {
                        if !mask.missing(x, y, t) {
                            dst.set(x, y, 0.0);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Forward flow-line fluxes shared by the coupling gradient and energy:
/// per slice `k`, the diffusivity fields and the composite products
/// `B * residual` that get pulled back along the backward flow.
pub(crate) struct CouplingFluxes {
    /// Diffusivity weighting the brightness residual, per slice.
    pub b_scalar: Vec<Field2>,
    /// `B * r` per slice and channel.
    pub flux_scalar: Vec<Vec<Field2>>,
    /// `B_grad * R` per slice and channel, when gradients couple.
    pub flux_grad: Option<Vec<Vec<VecField2>>>,
}

pub(crate) fn coupling_fluxes(
    u: &ImageSequence,
    v: &FlowField,
    coupling: CouplingTerm,
    gamma: f64,
    penalty: &Penalty,
    policy: SamplePolicy,
) -> Result<CouplingFluxes> {
    if v.direction() != FlowDirection::Forward || !v.same_grid(u) {
        return Err(Error::dims("coupling wants a matching forward flow"));
    }
    let slices = u.frames() - 1;
    let gplanes = if coupling.uses_gradients() {
        Some(gradient_planes(u))
    } else {
        None
    };
    let mut b_scalar = Vec::with_capacity(slices);
    let mut flux_scalar = Vec::with_capacity(slices);
    let mut flux_grad = if coupling.uses_gradients() {
        Some(Vec::with_capacity(slices))
    } else {
        None
    };
    for k in 0..slices {
        let r = lie_forward(u, v, k, policy)?;
        let rg = match &gplanes {
            Some(g) => Some(forward_gradient_residual(g, v, k, policy)?),
            None => None,
        };
        let mut b1 = Field2::zeros(u.width(), u.height());
        let mut bg = Field2::zeros(u.width(), u.height());
        for y in 0..u.height() {
            for x in 0..u.width() {
                let mut s = 0.0;
                for rc in &r {
                    let v = rc.get(x, y);
                    s += v * v;
                }
                let mut sg = 0.0;
                if let Some(rg) = &rg {
                    for rc in rg {
                        let (a, b) = rc.get(x, y);
                        sg += a * a + b * b;
                    }
                }
                match coupling {
                    CouplingTerm::Brightness => {
                        b1.set(x, y, penalty.diffusivity(s));
                    }
                    CouplingTerm::BrightnessGradient => {
                        let b = penalty.diffusivity(s + gamma * sg);
                        b1.set(x, y, b);
                        bg.set(x, y, b);
                    }
                    CouplingTerm::SplitGradient => {
                        b1.set(x, y, penalty.diffusivity(s));
                        bg.set(x, y, penalty.diffusivity(sg));
                    }
                }
            }
        }
        let fs: Vec<Field2> = r
            .iter()
            .map(|rc| {
                Field2::from_fn(u.width(), u.height(), |x, y| b1.get(x, y) * rc.get(x, y))
            })
            .collect();
        if let (Some(fg), Some(rg)) = (&mut flux_grad, &rg) {
            let q: Vec<VecField2> = rg
                .iter()
                .map(|rc| {
                    let mut q = VecField2::zeros(u.width(), u.height());
                    for y in 0..u.height() {
                        for x in 0..u.width() {
                            let b = bg.get(x, y);
                            let (a, bb) = rc.get(x, y);
                            q.set(x, y, (b * a, b * bb));
                        }
                    }
                    q
                })
                .collect();
            fg.push(q);
        }
        b_scalar.push(b1);
        flux_scalar.push(fs);
    }
    Ok(CouplingFluxes {
        b_scalar,
        flux_scalar,
        flux_grad,
    })
}

/// Value of the flow-line coupling energy (the reconstruction-side sum over
/// slices of the penalized forward residuals).
pub fn coupling_energy(
    u: &ImageSequence,
    v: &FlowField,
    coupling: CouplingTerm,
    gamma: f64,
    penalty: &Penalty,
    policy: SamplePolicy,
) -> Result<f64> {
    if v.direction() != FlowDirection::Forward || !v.same_grid(u) {
        return Err(Error::dims("coupling wants a matching forward flow"));
    }
    let gplanes = if coupling.uses_gradients() {
        Some(gradient_planes(u))
    } else {
        None
    };
    let mut acc = 0.0;
    for k in 0..u.frames() - 1 {
        let r = lie_forward(u, v, k, policy)?;
        let rg = match &gplanes {
            Some(g) => Some(forward_gradient_residual(g, v, k, policy)?),
            None => None,
        };
        for y in 0..u.height() {
            for x in 0..u.width() {
                let mut s = 0.0;
                for rc in &r {
                    let v = rc.get(x, y);
                    s += v * v;
                }
                let mut sg = 0.0;
                if let Some(rg) = &rg {
                    for rc in rg {
                        let (a, b) = rc.get(x, y);
                        sg += a * a + b * b;
                    }
                }
                acc += match coupling {
                    CouplingTerm::Brightness => penalty.value(s),
                    CouplingTerm::BrightnessGradient => penalty.value(s + gamma * sg),
                    CouplingTerm::SplitGradient => penalty.value(s) + gamma * penalty.value(sg),
                };
            }
        }
    }
    Ok(0.5 * acc)
}

/// Direct backward coefficient and flux fields at frame `k`, built from the
/// backward flow-line residuals themselves. These feed the transport term
/// only; the diffusion part uses the pulled-back forward composites.
struct BackwardFluxes {
    b: Field2,
    flux: Vec<Field2>,
    flux_grad: Option<Vec<VecField2>>,
}

fn backward_fluxes(
    u: &ImageSequence,
    gplanes: Option<&Vec<Vec<VecField2>>>,
    wbwd: &FlowField,
    k: usize,
    coupling: CouplingTerm,
    gamma: f64,
    penalty: &Penalty,
    policy: SamplePolicy,
) -> Result<BackwardFluxes> {
    let r = lie_backward(u, wbwd, k, policy)?;
    let rg = match gplanes {
        Some(g) => Some(backward_gradient_residual(g, wbwd, k, policy)?),
        None => None,
    };
    let w = u.width();
    let h = u.height();
    let mut b1 = Field2::zeros(w, h);
    let mut bg = Field2::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for rc in &r {
                let v = rc.get(x, y);
                s += v * v;
            }
            let mut sg = 0.0;
            if let Some(rg) = &rg {
                for rc in rg {
                    let (a, b) = rc.get(x, y);
                    sg += a * a + b * b;
                }
            }
            match coupling {
                CouplingTerm::Brightness => b1.set(x, y, penalty.diffusivity(s)),
                CouplingTerm::BrightnessGradient => {
                    let b = penalty.diffusivity(s + gamma * sg);
                    b1.set(x, y, b);
                    bg.set(x, y, b);
                }
                CouplingTerm::SplitGradient => {
                    b1.set(x, y, penalty.diffusivity(s));
                    bg.set(x, y, penalty.diffusivity(sg));
                }
            }
        }
    }
    let flux: Vec<Field2> = r
        .iter()
        .map(|rc| Field2::from_fn(w, h, |x, y| b1.get(x, y) * rc.get(x, y)))
        .collect();
    let flux_grad = rg.map(|rg| {
        rg.iter()
            .map(|rc| {
                let mut q = VecField2::zeros(w, h);
                for y in 0..h {
                    for x in 0..w {
                        let b = bg.get(x, y);
                        let (a, bb) = rc.get(x, y);
                        q.set(x, y, (b * a, b * bb));
                    }
                }
                q
            })
            .collect()
    });
    Ok(BackwardFluxes {
        b: b1,
        flux,
        flux_grad,
    })
}

/// Image-side gradient of the flow-line coupling term.
///
/// The diffusion half pulls the forward composite fluxes back along `wbwd`
/// with zero-padded interpolation, which keeps the operator the exact
/// derivative of the evaluated energy whenever the backward field inverts
/// the forward warp. With zero flow this reduces to the weighted temporal
/// second difference `-(B- u_{k-1} - (B- + B+) u_k + B+ u_{k+1})` per
/// channel. The transport term weighs the direct flow-line residuals by the
/// divergence corrections of the two fields, one-sided per the selected
/// mode.
pub fn temporal_gradient(
    u: &ImageSequence,
    vfwd: &FlowField,
    wbwd: &FlowField,
    mask: &Mask,
    config: &EnergyConfig,
) -> Result<ImageSequence> {
    if wbwd.direction() != FlowDirection::Backward || !wbwd.same_grid(u) {
        return Err(Error::dims("temporal_gradient wants a backward flow"));
    }
    if !mask.same_grid(u) {
        return Err(Error::dims("temporal_gradient mask shape"));
    }
    let fluxes = coupling_fluxes(
        u,
        vfwd,
        config.coupling,
        config.gamma,
        config.penalty_ref(),
        config.policy,
    )?;
    let slices = u.frames() - 1;
    let transport = config.transport;
    // Divergence factors and direct backward fluxes, needed only when
    // transport is on.
    let mut fv: Vec<Option<Field2>> = vec![None; u.frames()];
    let mut fw: Vec<Option<Field2>> = vec![None; u.frames()];
    let mut bwd: Vec<Option<BackwardFluxes>> = Vec::new();
    for _ in 0..u.frames() {
        bwd.push(None);
    }
    if transport != Transport::Off {
        let gplanes = if config.coupling.uses_gradients() {
            Some(gradient_planes(u))
        } else {
            None
        };
        for k in 0..slices {
            fv[k] = Some(flow_divergence_correction(vfwd, k)?);
        }
        for k in 1..u.frames() {
            fw[k] = Some(flow_divergence_correction(wbwd, k)?);
            bwd[k] = Some(backward_fluxes(
                u,
                gplanes.as_ref(),
                wbwd,
                k,
                config.coupling,
                config.gamma,
                config.penalty_ref(),
                config.policy,
            )?);
        }
    }

    let w = u.width();
    let h = u.height();
    let policy = config.policy;
    let mut out = ImageSequence::zeros(w, h, u.frames(), u.channels());
    for k in 0..u.frames() {
        let has_fwd = k < slices;
        let has_bwd = k >= 1;
        let wslice = if has_bwd { Some(wbwd.slice(k)?) } else { None };
        for c in 0..u.channels() {
            let own = if has_fwd {
                Some(&fluxes.flux_scalar[k][c])
            } else {
                None
            };
            let prev = if has_bwd {
                Some(&fluxes.flux_scalar[k - 1][c])
            } else {
                None
            };
            let own_q = fluxes
                .flux_grad
                .as_ref()
                .and_then(|fg| if has_fwd { Some(&fg[k][c]) } else { None });
            let prev_q = fluxes
                .flux_grad
                .as_ref()
                .and_then(|fg| if has_bwd { Some(&fg[k - 1][c]) } else { None });

            let mut scalar = Field2::zeros(w, h);
            let mut qarg = if own_q.is_some() || prev_q.is_some() {
                Some(VecField2::zeros(w, h))
            } else {
                None
            };
            for y in 0..h {
                for x in 0..w {
                    let (bx, by) = match wslice {
                        Some(s) => {
                            let (dx, dy) = s.get(x, y);
                            (x as f64 - dx, y as f64 - dy)
                        }
                        None => (0.0, 0.0),
                    };
                    let g_own = own.map_or(0.0, |f| f.get(x, y));
                    let g_pulled = prev.map_or(0.0, |f| f.sample_zero(bx, by, policy));
                    let mut val = g_pulled - g_own;

                    let (q_own, q_pulled) = match (&own_q, &prev_q) {
                        (None, None) => ((0.0, 0.0), (0.0, 0.0)),
                        _ => {
                            let qo = own_q.map_or((0.0, 0.0), |q| q.get(x, y));
                            let qp = prev_q.map_or((0.0, 0.0), |q| {
                                (
                                    q.x.sample_zero(bx, by, policy),
                                    q.y.sample_zero(bx, by, policy),
                                )
                            });
                            (qo, qp)
                        }
                    };
                    let mut qval = (q_pulled.0 - q_own.0, q_pulled.1 - q_own.1);

                    if transport != Transport::Off {
                        let fv_here = if has_fwd {
                            fv[k].as_ref().map_or(0.0, |f| f.get(x, y))
                        } else {
                            0.0
                        };
                        let fw_here = if has_bwd {
                            fw[k].as_ref().map_or(0.0, |f| f.get(x, y))
                        } else {
                            0.0
                        };
                        let back = if has_bwd { bwd[k].as_ref() } else { None };
                        let g_back = back.map_or(0.0, |b| b.flux[c].get(x, y));
                        let q_back = back.map_or((0.0, 0.0), |b| {
                            b.flux_grad
                                .as_ref()
                                .map_or((0.0, 0.0), |q| q[c].get(x, y))
                        });
                        match transport {
                            Transport::Naive => {
                                val -= 0.5 * (fv_here * g_own + fw_here * g_back);
                                qval.0 -= 0.5 * (fv_here * q_own.0 + fw_here * q_back.0);
                                qval.1 -= 0.5 * (fv_here * q_own.1 + fw_here * q_back.1);
                            }
                            Transport::BestMatch => {
                                // an absent side carries the clamped zero
                                // residual, i.e. the ceiling diffusivity
                                let ceiling = config.penalty.diffusivity(0.0);
                                let b_own = if has_fwd {
                                    fluxes.b_scalar[k].get(x, y)
                                } else {
                                    ceiling
                                };
                                let b_back = back.map_or(ceiling, |b| b.b.get(x, y));
                                if b_own > b_back {
                                    val -= fv_here * g_own;
                                    qval.0 -= fv_here * q_own.0;
                                    qval.1 -= fv_here * q_own.1;
                                } else if has_bwd {
                                    val -= fw_here * g_back;
                                    qval.0 -= fw_here * q_back.0;
                                    qval.1 -= fw_here * q_back.1;
                                }
                            }
                            Transport::Off => {}
                        }
                    }

                    scalar.set(x, y, val);
                    if let Some(q) = &mut qarg {
                        q.set(x, y, qval);
                    }
                }
            }

            let dst = out.plane_mut(k, c);
            *dst = scalar;
            if let Some(q) = qarg {
                let dt = grid::gradient_transpose(&q);
                for y in 0..h {
                    for x in 0..w {
                        dst.set(x, y, dst.get(x, y) + config.gamma * dt.get(x, y));
                    }
                }
            }
            if config.mode == RecoveryMode::PureInpaint {
                for y in 0..h {
                    for x in 0..w {
                        if !mask.missing(x, y, k) {
                            dst.set(x, y, 0.0);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

impl EnergyConfig {
    pub(crate) fn penalty_ref(&self) -> &Penalty {
        &self.penalty
    }
}

/// Total energy of the current reconstruction under fixed flows:
/// data fidelity (inpaint-denoise only), spatial TV, flow-line coupling,
/// and the flow regularizer of the forward field, weighted by the lambdas.
pub fn total_energy(
    u: &ImageSequence,
    u0: &ImageSequence,
    vfwd: &FlowField,
    mask: &Mask,
    config: &EnergyConfig,
) -> Result<f64> {
    if !u.same_shape(u0) || !mask.same_grid(u) {
        return Err(Error::dims("total_energy shapes"));
    }
    let mut e = 0.0;
    if config.mode == RecoveryMode::InpaintDenoise {
        let mut acc = 0.0;
        for t in 0..u.frames() {
            for c in 0..u.channels() {
                for y in 0..u.height() {
                    for x in 0..u.width() {
                        if !mask.missing(x, y, t) {
                            let d = u.get(x, y, t, c) - u0.get(x, y, t, c);
                            acc += d * d;
                        }
                    }
                }
            }
        }
        e += config.lambda1 * 0.5 * acc;
    }
    if config.lambda2 != 0.0 {
        let mut acc = 0.0;
        for t in 0..u.frames() {
            let planes: Vec<&Field2> = (0..u.channels()).map(|c| u.plane(t, c)).collect();
            acc += halfpoint::tv2d_energy(&planes, &config.penalty);
        }
        e += config.lambda2 * acc;
    }
    if config.lambda3 != 0.0 && u.frames() > 1 {
        e += config.lambda3
            * coupling_energy(
                u,
                vfwd,
                config.coupling,
                config.gamma,
                &config.penalty,
                config.policy,
            )?;
    }
    if config.lambda4 != 0.0 && vfwd.num_slices() > 0 {
        e += config.lambda4 * flow::smoothness_energy(vfwd, config.smoothness, &config.penalty);
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::FlowDirection;
    use crate::synth::{translating_sequence, translation_flow, BlobTexture};

    fn rough_sequence(w: usize, h: usize, t: usize, c: usize, seed: usize) -> ImageSequence {
        ImageSequence::from_fn(w, h, t, c, |x, y, k, ch| {
            (((x * 17 + y * 31 + k * 53 + ch * 71 + seed * 13) % 23) as f64) / 23.0 * 0.9 + 0.05
        })
    }

    /// Constant-per-slice forward flow with fractional parts away from cell
    /// boundaries, and the exactly inverse backward field.
    fn constant_flow_pair(
        w: usize,
        h: usize,
        t: usize,
        shifts: &[(f64, f64)],
    ) -> (FlowField, FlowField) {
        assert_eq!(shifts.len(), t - 1);
        let mut fwd = FlowField::zeros(w, h, t, FlowDirection::Forward);
        let mut bwd = FlowField::zeros(w, h, t, FlowDirection::Backward);
        for k in 0..t - 1 {
            for y in 0..h {
                for x in 0..w {
                    fwd.slice_mut(k).unwrap().set(x, y, shifts[k]);
                    bwd.slice_mut(k + 1).unwrap().set(x, y, shifts[k]);
                }
            }
        }
        (fwd, bwd)
    }

    fn fd_config(coupling: CouplingTerm) -> EnergyConfig {
        EnergyConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 1.0,
            lambda4: 0.0,
            gamma: 0.1,
            coupling,
            mode: RecoveryMode::PureInpaint,
            transport: Transport::Off,
            ..EnergyConfig::default()
        }
    }

    #[test]
    fn penalty_properties() {
        let p = Penalty::new(1e-3);
        assert!((p.value(0.0) - 1e-3).abs() < 1e-18);
        assert!((p.diffusivity(0.0) - 500.0).abs() < 1e-9);
        assert!(p.diffusivity(0.5) < p.diffusivity(0.1));
        for s in [0.0, 1e-6, 0.01, 1.0, 100.0] {
            let d = p.diffusivity(s);
            assert!(d > 0.0 && d <= 500.0);
        }
    }

    #[test]
    fn diffusivity_examples() {
        // time-constant sequence: zero residual everywhere
        let u = ImageSequence::constant(6, 6, 3, 1, 0.3);
        let v = FlowField::zeros(6, 6, 3, FlowDirection::Forward);
        let p = Penalty::new(1e-3);
        let b = temporal_diffusivity(
            &u,
            &v,
            0,
            ResidualKind::Intensity,
            FlowSide::Forward,
            0.1,
            &p,
            SamplePolicy::default(),
        )
        .unwrap();
        for y in 0..6 {
            for x in 0..6 {
                assert!((b.get(x, y) - 500.0).abs() < 1e-9);
            }
        }

        // unit residual: phi'(1) ~ 0.5
        let mut u = ImageSequence::constant(6, 6, 2, 1, 0.0);
        for y in 0..6 {
            for x in 0..6 {
                u.set(x, y, 1, 0, 1.0);
            }
        }
        let v = FlowField::zeros(6, 6, 2, FlowDirection::Forward);
        let b = temporal_diffusivity(
            &u,
            &v,
            0,
            ResidualKind::Intensity,
            FlowSide::Forward,
            0.1,
            &p,
            SamplePolicy::default(),
        )
        .unwrap();
        let want = 0.5 / (1.0f64 + 1e-6).sqrt();
        for y in 0..6 {
            for x in 0..6 {
                assert!((b.get(x, y) - want).abs() < 1e-12);
            }
        }

        // two identical channels double the penalty argument
        let u1 = rough_sequence(6, 6, 2, 1, 3);
        let u2 = ImageSequence::from_fn(6, 6, 2, 2, |x, y, t, _| u1.get(x, y, t, 0));
        let b2 = temporal_diffusivity(
            &u2,
            &v,
            0,
            ResidualKind::Intensity,
            FlowSide::Forward,
            0.1,
            &p,
            SamplePolicy::default(),
        )
        .unwrap();
        for y in 0..6 {
            for x in 0..6 {
                let r = u1.get(x, y, 1, 0) - u1.get(x, y, 0, 0);
                assert!((b2.get(x, y) - p.diffusivity(2.0 * r * r)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn data_gradient_examples() {
        let u0 = rough_sequence(5, 4, 2, 1, 1);
        let mask = Mask::from_fn(5, 4, 2, |x, _, _| x < 2);
        // u == u0 -> zero
        let g = data_gradient(&u0, &u0, &mask).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        // uniform offset outside the locus
        let mut u = u0.clone();
        for t in 0..2 {
            for y in 0..4 {
                for x in 0..5 {
                    u.set(x, y, t, 0, u0.get(x, y, t, 0) + 0.1);
                }
            }
        }
        let g = data_gradient(&u, &u0, &mask).unwrap();
        for t in 0..2 {
            for y in 0..4 {
                for x in 0..5 {
                    let want = if x < 2 { 0.0 } else { 0.1 };
                    assert!((g.get(x, y, t, 0) - want).abs() < 1e-15);
                }
            }
        }
        // all-missing mask -> zero everywhere
        let full = Mask::new_full(5, 4, 2);
        let g = data_gradient(&u, &u0, &full).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn tv_gradient_single_bright_pixel_sign_pattern() {
        // Finite differences of the energy are the oracle for the sign
        // pattern: raising the peak raises the energy, raising a neighbor
        // lowers it.
        let mut u = ImageSequence::constant(7, 7, 1, 1, 0.0);
        u.set(3, 3, 0, 0, 1.0);
        let mask = Mask::new_full(7, 7, 1);
        let p = Penalty::new(1e-3);
        let g = tv_gradient(&u, &mask, RecoveryMode::PureInpaint, &p).unwrap();

        let cfg = EnergyConfig {
            lambda1: 0.0,
            lambda2: 1.0,
            lambda3: 0.0,
            lambda4: 0.0,
            mode: RecoveryMode::PureInpaint,
            ..EnergyConfig::default()
        };
        let v = FlowField::zeros(7, 7, 1, FlowDirection::Forward);
        let delta = 1e-7;
        for &(x, y) in &[(3usize, 3usize), (2, 3), (4, 3), (3, 2), (3, 4)] {
            let mut up = u.clone();
            up.set(x, y, 0, 0, u.get(x, y, 0, 0) + delta);
            let mut dn = u.clone();
            dn.set(x, y, 0, 0, u.get(x, y, 0, 0) - delta);
            let fd = (total_energy(&up, &u, &v, &mask, &cfg).unwrap()
                - total_energy(&dn, &u, &v, &mask, &cfg).unwrap())
                / (2.0 * delta);
            let an = g.get(x, y, 0, 0);
            assert!((fd - an).abs() < 1e-5 * (1.0 + an.abs()), "fd {fd} vs {an}");
        }
        assert!(g.get(3, 3, 0, 0) > 0.0, "peak pushes energy up");
        for &(x, y) in &[(2, 3), (4, 3), (3, 2), (3, 4)] {
            assert!(g.get(x, y, 0, 0) < 0.0, "neighbor ({x},{y})");
        }
    }

    #[test]
    fn tv_gradient_restriction_and_kernel() {
        let p = Penalty::new(1e-3);
        let c = ImageSequence::constant(6, 6, 2, 1, 0.5);
        let mask = Mask::new_full(6, 6, 2);
        let g = tv_gradient(&c, &mask, RecoveryMode::PureInpaint, &p).unwrap();
        assert_eq!(g.max_abs(), 0.0);

        // pure inpaint zeroes the gradient outside the locus
        let u = rough_sequence(6, 6, 1, 1, 5);
        let m = Mask::from_fn(6, 6, 1, |x, y, _| x >= 2 && x < 4 && y >= 2 && y < 4);
        let g = tv_gradient(&u, &m, RecoveryMode::PureInpaint, &p).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                if !m.missing(x, y, 0) {
                    assert_eq!(g.get(x, y, 0, 0), 0.0);
                }
            }
        }
    }

    #[test]
    fn temporal_gradient_zero_flow_is_weighted_second_difference() {
        let u = rough_sequence(6, 5, 4, 1, 2);
        let v = FlowField::zeros(6, 5, 4, FlowDirection::Forward);
        let w = FlowField::zeros(6, 5, 4, FlowDirection::Backward);
        let mask = Mask::new_full(6, 5, 4);
        let cfg = fd_config(CouplingTerm::Brightness);
        let g = temporal_gradient(&u, &v, &w, &mask, &cfg).unwrap();
        let p = &cfg.penalty;
        for k in 1..3 {
            for y in 0..5 {
                for x in 0..6 {
                    let rm = u.get(x, y, k, 0) - u.get(x, y, k - 1, 0);
                    let rp = u.get(x, y, k + 1, 0) - u.get(x, y, k, 0);
                    let bm = p.diffusivity(rm * rm);
                    let bp = p.diffusivity(rp * rp);
                    let want = -(bm * u.get(x, y, k - 1, 0)
                        - (bm + bp) * u.get(x, y, k, 0)
                        + bp * u.get(x, y, k + 1, 0));
                    assert!(
                        (g.get(x, y, k, 0) - want).abs() < 1e-12,
                        "at ({x},{y},{k}): {} vs {want}",
                        g.get(x, y, k, 0)
                    );
                }
            }
        }
    }

    #[test]
    fn temporal_gradient_vanishes_on_exact_conservation() {
        let tex = BlobTexture::random(20, 16, 14, 4);
        let u = translating_sequence(20, 16, 4, (1.0, 0.0), &tex);
        let (v, w) = translation_flow(20, 16, 4, (1.0, 0.0));
        let mask = Mask::new_full(20, 16, 4);
        for coupling in [
            CouplingTerm::Brightness,
            CouplingTerm::BrightnessGradient,
            CouplingTerm::SplitGradient,
        ] {
            let g = temporal_gradient(&u, &v, &w, &mask, &fd_config(coupling)).unwrap();
            // interior only: border rows mix one-sided gradient stencils
            let mut worst: f64 = 0.0;
            for k in 0..4 {
                for y in 3..13 {
                    for x in 3..16 {
                        worst = worst.max(g.get(x, y, k, 0).abs());
                    }
                }
            }
            assert!(worst < 1e-12, "{coupling:?}: {worst}");
        }
    }

    #[test]
    fn temporal_gradient_matches_finite_differences_of_the_energy() {
        for channels in [1usize, 2] {
            let u = rough_sequence(6, 6, 3, channels, channels + 7);
            let shifts = [(0.4, -0.3), (-0.6, 0.45)];
            let (v, w) = constant_flow_pair(6, 6, 3, &shifts);
            let mask = Mask::new_full(6, 6, 3);
            for coupling in [
                CouplingTerm::Brightness,
                CouplingTerm::BrightnessGradient,
                CouplingTerm::SplitGradient,
            ] {
                let cfg = fd_config(coupling);
                let g = temporal_gradient(&u, &v, &w, &mask, &cfg).unwrap();
                let delta = 1e-6;
                let mut worst = 0.0f64;
                for t in 0..3 {
                    for c in 0..channels {
                        for y in 0..6 {
                            for x in 0..6 {
                                let mut up = u.clone();
                                up.set(x, y, t, c, u.get(x, y, t, c) + delta);
                                let mut dn = u.clone();
                                dn.set(x, y, t, c, u.get(x, y, t, c) - delta);
                                let fd = (total_energy(&up, &u, &v, &mask, &cfg).unwrap()
                                    - total_energy(&dn, &u, &v, &mask, &cfg).unwrap())
                                    / (2.0 * delta);
                                let an = g.get(x, y, t, c);
                                worst = worst.max((fd - an).abs() / (1.0 + an.abs()));
                            }
                        }
                    }
                }
                assert!(worst < 2e-5, "{coupling:?} {channels}ch worst {worst}");
            }
        }
    }

    #[test]
    fn identical_channels_share_the_coupled_diffusivity() {
        let u1 = rough_sequence(6, 5, 3, 1, 9);
        let u2 = ImageSequence::from_fn(6, 5, 3, 2, |x, y, t, _| u1.get(x, y, t, 0));
        let v = FlowField::zeros(6, 5, 3, FlowDirection::Forward);
        let w = FlowField::zeros(6, 5, 3, FlowDirection::Backward);
        let mask = Mask::new_full(6, 5, 3);
        let cfg = fd_config(CouplingTerm::Brightness);
        let g2 = temporal_gradient(&u2, &v, &w, &mask, &cfg).unwrap();
        let p = &cfg.penalty;
        // both channels agree, and each equals the scalar stencil whose
        // penalty argument is the channel-summed magnitude
        for k in 1..2 {
            for y in 0..5 {
                for x in 0..6 {
                    let rm = u1.get(x, y, k, 0) - u1.get(x, y, k - 1, 0);
                    let rp = u1.get(x, y, k + 1, 0) - u1.get(x, y, k, 0);
                    let bm = p.diffusivity(2.0 * rm * rm);
                    let bp = p.diffusivity(2.0 * rp * rp);
                    let want = bm * rm - bp * rp;
                    assert_eq!(g2.get(x, y, k, 0), g2.get(x, y, k, 1));
                    assert!((g2.get(x, y, k, 0) - want).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn total_energy_examples() {
        // constant sequence at the observation with zero flow: only the
        // penalty floors remain
        let n = 6 * 6;
        let u = ImageSequence::constant(6, 6, 3, 1, 0.5);
        let v = FlowField::zeros(6, 6, 3, FlowDirection::Forward);
        let mask = Mask::new_empty(6, 6, 3);
        let eps = 1e-3;
        let cfg = EnergyConfig {
            lambda1: 1.0,
            lambda2: 0.2,
            lambda3: 1.0,
            lambda4: 0.4,
            mode: RecoveryMode::InpaintDenoise,
            coupling: CouplingTerm::Brightness,
            smoothness: SmoothnessTerm::Shared,
            ..EnergyConfig::default()
        };
        let e = total_energy(&u, &u, &v, &mask, &cfg).unwrap();
        let edges_per_frame = (5 * 6 + 6 * 5) as f64;
        let want_e2 = cfg.lambda2 * 0.5 * 3.0 * edges_per_frame * eps;
        let want_e3 = cfg.lambda3 * 0.5 * (n as f64) * 2.0 * eps;
        let want_e4 = cfg.lambda4 * 0.5 * 2.0 * edges_per_frame * eps;
        assert!(
            (e - (want_e2 + want_e3 + want_e4)).abs() < 1e-12,
            "{e} vs {}",
            want_e2 + want_e3 + want_e4
        );

        // doubling lambda3 doubles only the coupling part
        let tex = BlobTexture::random(12, 12, 8, 2);
        let u = translating_sequence(12, 12, 3, (0.5, 0.0), &tex);
        let (v, _) = translation_flow(12, 12, 3, (0.5, 0.0));
        let mask = Mask::new_empty(12, 12, 3);
        let mut cfg = fd_config(CouplingTerm::Brightness);
        cfg.lambda2 = 0.0;
        cfg.lambda4 = 0.0;
        let e1 = total_energy(&u, &u, &v, &mask, &cfg).unwrap();
        cfg.lambda3 = 2.0;
        let e2 = total_energy(&u, &u, &v, &mask, &cfg).unwrap();
        assert!((e2 - 2.0 * e1).abs() < 1e-12);

        // exact conservation: the coupling part sits at the penalty floor
        let u = translating_sequence(12, 12, 3, (1.0, 0.0), &tex);
        let (v, _) = translation_flow(12, 12, 3, (1.0, 0.0));
        let mut cfg = fd_config(CouplingTerm::Brightness);
        cfg.lambda2 = 0.0;
        cfg.lambda4 = 0.0;
        let e = total_energy(&u, &u, &v, &mask, &cfg).unwrap();
        let want = 0.5 * (12.0 * 12.0) * 2.0 * eps;
        assert!((e - want).abs() < 1e-12, "{e} vs {want}");
    }
}
