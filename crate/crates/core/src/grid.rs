//! Spatiotemporal fields, subpixel sampling, warping, and the discrete
//! flow-line difference operators every energy term is built from.
//!
//! Conventions: pixel (x, y) sits at integer coordinates, x growing to the
//! right and y downward; the sampling domain of a `W x H` field is
//! `[0, W-1] x [0, H-1]`. Frames are indexed `0..T`. A forward displacement
//! slice `k` maps frame `k` to `k+1` through `x + v_k(x)`; a backward slice
//! `k` maps frame `k` to `k-1` through `x - w_k(x)`. Warp targets that leave
//! the domain follow the clamp-to-self rule: the flow-line difference is
//! forced to zero at that point.

use crate::error::{Error, Result};

/// Interpolation kernel used for subpixel sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Bilinear,
    /// Catmull-Rom cubic over a 4x4 neighborhood.
    Bicubic,
}

/// Subpixel sampling policy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SamplePolicy {
    pub interpolation: Interpolation,
}

impl SamplePolicy {
    pub fn bilinear() -> Self {
        SamplePolicy {
            interpolation: Interpolation::Bilinear,
        }
    }

    pub fn bicubic() -> Self {
        SamplePolicy {
            interpolation: Interpolation::Bicubic,
        }
    }
}

/// 1D interpolation weights and their derivatives over taps relative to a
/// base index. Linear uses taps {0, 1}; cubic uses {-1, 0, 1, 2}.
#[derive(Clone, Copy)]
struct Kernel1 {
    first: isize,
    len: usize,
    w: [f64; 4],
    dw: [f64; 4],
}

impl Kernel1 {
    fn linear(f: f64) -> Kernel1 {
        Kernel1 {
            first: 0,
            len: 2,
            w: [1.0 - f, f, 0.0, 0.0],
            dw: [-1.0, 1.0, 0.0, 0.0],
        }
    }

    fn cubic(f: f64) -> Kernel1 {
        let f2 = f * f;
        let f3 = f2 * f;
        Kernel1 {
            first: -1,
            len: 4,
            w: [
                -0.5 * f + f2 - 0.5 * f3,
                1.0 - 2.5 * f2 + 1.5 * f3,
                0.5 * f + 2.0 * f2 - 1.5 * f3,
                -0.5 * f2 + 0.5 * f3,
            ],
            dw: [
                -0.5 + 2.0 * f - 1.5 * f2,
                -5.0 * f + 4.5 * f2,
                0.5 + 4.0 * f - 4.5 * f2,
                -f + 1.5 * f2,
            ],
        }
    }

    fn for_policy(policy: SamplePolicy, f: f64) -> Kernel1 {
        match policy.interpolation {
            Interpolation::Bilinear => Kernel1::linear(f),
            Interpolation::Bicubic => Kernel1::cubic(f),
        }
    }
}

/// Split a coordinate into a base index and fractional offset.
///
/// With `clamped` the coordinate is first clamped into the domain and the
/// base index pinned so the cell stays in range (exactness at the far edge).
/// Without it the raw floor is kept, which is what zero-padded pullbacks
/// need for adjoint consistency.
fn split_coord(c: f64, size: usize, clamped: bool) -> (isize, f64) {
    if clamped {
        if size == 1 {
            return (0, 0.0);
        }
        let cc = c.clamp(0.0, (size - 1) as f64);
        let c0 = (cc.floor() as isize).min(size as isize - 2);
        (c0, cc - c0 as f64)
    } else {
        let c0 = c.floor();
        (c0 as isize, c - c0)
    }
}

/// A 2D scalar field with row-major `f64` storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Field2 {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Field2 {
    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "empty field");
        Field2 {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Field2 {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut out = Field2::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                out.data[y * width + x] = f(x, y);
            }
        }
        out
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height);
        Field2 {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn add_at(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] += v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Field2) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// True when (x, y) lies inside the sampling domain.
    #[inline]
    pub fn in_domain(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    #[inline]
    fn tap(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    #[inline]
    fn tap_zero(&self, x: isize, y: isize) -> f64 {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            0.0
        } else {
            self.data[y as usize * self.width + x as usize]
        }
    }

    /// Interpolate at a subpixel point. Taps beyond the border replicate the
    /// border value, so coordinates outside the domain clamp to the nearest
    /// boundary sample. Exact at grid points and for constant fields.
    pub fn sample(&self, x: f64, y: f64, policy: SamplePolicy) -> f64 {
        let (x0, fx) = split_coord(x, self.width, true);
        let (y0, fy) = split_coord(y, self.height, true);
        let kx = Kernel1::for_policy(policy, fx);
        let ky = Kernel1::for_policy(policy, fy);
        let mut acc = 0.0;
        for j in 0..ky.len {
            let wy = ky.w[j];
            if wy == 0.0 {
                continue;
            }
            let yy = y0 + ky.first + j as isize;
            let mut row = 0.0;
            for i in 0..kx.len {
                let wx = kx.w[i];
                if wx == 0.0 {
                    continue;
                }
                row += wx * self.tap(x0 + kx.first + i as isize, yy);
            }
            acc += wy * row;
        }
        acc
    }

    /// Interpolate with out-of-range taps contributing zero and no weight
    /// renormalization. This is the adjoint-consistent pullback used for
    /// composite flux fields; fully exterior points yield zero.
    pub fn sample_zero(&self, x: f64, y: f64, policy: SamplePolicy) -> f64 {
        let (x0, fx) = split_coord(x, self.width, false);
        let (y0, fy) = split_coord(y, self.height, false);
        let kx = Kernel1::for_policy(policy, fx);
        let ky = Kernel1::for_policy(policy, fy);
        let mut acc = 0.0;
        for j in 0..ky.len {
            let wy = ky.w[j];
            if wy == 0.0 {
                continue;
            }
            let yy = y0 + ky.first + j as isize;
            let mut row = 0.0;
            for i in 0..kx.len {
                let wx = kx.w[i];
                if wx == 0.0 {
                    continue;
                }
                row += wx * self.tap_zero(x0 + kx.first + i as isize, yy);
            }
            acc += wy * row;
        }
        acc
    }

    /// Spatial derivative of the interpolant at (x, y): the exact gradient of
    /// what `sample` evaluates, so finite differences of warped energies
    /// match analytic flow gradients away from cell boundaries.
    pub fn sample_grad(&self, x: f64, y: f64, policy: SamplePolicy) -> (f64, f64) {
        let (x0, fx) = split_coord(x, self.width, true);
        let (y0, fy) = split_coord(y, self.height, true);
        let kx = Kernel1::for_policy(policy, fx);
        let ky = Kernel1::for_policy(policy, fy);
        let mut gx = 0.0;
        let mut gy = 0.0;
        for j in 0..ky.len {
            let yy = y0 + ky.first + j as isize;
            for i in 0..kx.len {
                let v = self.tap(x0 + kx.first + i as isize, yy);
                gx += kx.dw[i] * ky.w[j] * v;
                gy += kx.w[i] * ky.dw[j] * v;
            }
        }
        (gx, gy)
    }
}

/// A 2D vector field stored as two scalar component fields.
#[derive(Clone, Debug, PartialEq)]
pub struct VecField2 {
    pub x: Field2,
    pub y: Field2,
}

impl VecField2 {
    pub fn zeros(width: usize, height: usize) -> Self {
        VecField2 {
            x: Field2::zeros(width, height),
            y: Field2::zeros(width, height),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        (self.x.get(x, y), self.y.get(x, y))
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: (f64, f64)) {
        self.x.set(x, y, v.0);
        self.y.set(x, y, v.1);
    }

    pub fn width(&self) -> usize {
        self.x.width()
    }

    pub fn height(&self) -> usize {
        self.x.height()
    }
}

/// A time-indexed stack of 2D frames on a common grid, one `Field2` plane
/// per (frame, channel). Intensities of actual images are normalized to
/// [0, 1]; gradient-shaped quantities reuse the container without that
/// constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSequence {
    width: usize,
    height: usize,
    frames: usize,
    channels: usize,
    planes: Vec<Field2>,
}

impl ImageSequence {
    pub fn zeros(width: usize, height: usize, frames: usize, channels: usize) -> Self {
        assert!(width >= 1 && height >= 1 && frames >= 1 && channels >= 1);
        ImageSequence {
            width,
            height,
            frames,
            channels,
            planes: vec![Field2::zeros(width, height); frames * channels],
        }
    }

    pub fn constant(width: usize, height: usize, frames: usize, channels: usize, v: f64) -> Self {
        let mut u = ImageSequence::zeros(width, height, frames, channels);
        for p in &mut u.planes {
            p.data_mut().iter_mut().for_each(|q| *q = v);
        }
        u
    }

    pub fn from_planes(
        width: usize,
        height: usize,
        frames: usize,
        channels: usize,
        planes: Vec<Field2>,
    ) -> Result<Self> {
        if planes.len() != frames * channels {
            return Err(Error::dims(format!(
                "expected {} planes, got {}",
                frames * channels,
                planes.len()
            )));
        }
        for p in &planes {
            if p.width() != width || p.height() != height {
                return Err(Error::dims(format!(
                    "plane is {}x{}, sequence is {}x{}",
                    p.width(),
                    p.height(),
                    width,
                    height
                )));
            }
        }
        Ok(ImageSequence {
            width,
            height,
            frames,
            channels,
            planes,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        frames: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut u = ImageSequence::zeros(width, height, frames, channels);
        for t in 0..frames {
            for c in 0..channels {
                for y in 0..height {
                    for x in 0..width {
                        u.set(x, y, t, c, f(x, y, t, c));
                    }
                }
            }
        }
        u
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn plane(&self, frame: usize, channel: usize) -> &Field2 {
        &self.planes[frame * self.channels + channel]
    }

    #[inline]
    pub fn plane_mut(&mut self, frame: usize, channel: usize) -> &mut Field2 {
        &mut self.planes[frame * self.channels + channel]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, frame: usize, channel: usize) -> f64 {
        self.plane(frame, channel).get(x, y)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, frame: usize, channel: usize, v: f64) {
        self.plane_mut(frame, channel).set(x, y, v);
    }

    pub fn same_shape(&self, other: &ImageSequence) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.frames == other.frames
            && self.channels == other.channels
    }

    /// Largest absolute value over all planes.
    pub fn max_abs(&self) -> f64 {
        self.planes.iter().fold(0.0, |m, p| m.max(p.max_abs()))
    }

    /// All values finite and inside [0, 1].
    pub fn in_unit_range(&self) -> bool {
        self.planes
            .iter()
            .all(|p| p.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)))
    }

    pub fn clamp_unit_range(&mut self) {
        for p in &mut self.planes {
            for v in p.data_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }
}

/// Direction of a displacement field relative to its host sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowDirection {
    /// Slice k maps frame k to k+1; valid frames 0..T-1.
    Forward,
    /// Slice k maps frame k to k-1; valid frames 1..T.
    Backward,
}

impl FlowDirection {
    pub fn name(self) -> &'static str {
        match self {
            FlowDirection::Forward => "forward",
            FlowDirection::Backward => "backward",
        }
    }
}

/// Per-frame 2D displacement field with `T-1` temporal slices for a
/// `T`-frame host sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    frames: usize,
    direction: FlowDirection,
    slices: Vec<VecField2>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize, frames: usize, direction: FlowDirection) -> Self {
        assert!(frames >= 1);
        FlowField {
            width,
            height,
            frames,
            direction,
            slices: vec![VecField2::zeros(width, height); frames - 1],
        }
    }

    pub fn from_slices(
        width: usize,
        height: usize,
        frames: usize,
        direction: FlowDirection,
        slices: Vec<VecField2>,
    ) -> Result<Self> {
        if slices.len() != frames.saturating_sub(1) {
            return Err(Error::dims(format!(
                "{} flow needs {} slices for {} frames, got {}",
                direction.name(),
                frames.saturating_sub(1),
                frames,
                slices.len()
            )));
        }
        for s in &slices {
            if s.width() != width || s.height() != height {
                return Err(Error::dims("flow slice shape"));
            }
        }
        Ok(FlowField {
            width,
            height,
            frames,
            direction,
            slices,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn direction(&self) -> FlowDirection {
        self.direction
    }

    pub fn num_slices(&self) -> usize {
        self.slices.len()
    }

    fn storage_index(&self, frame: usize) -> Result<usize> {
        match self.direction {
            FlowDirection::Forward => {
                if frame + 1 < self.frames {
                    Ok(frame)
                } else {
                    Err(Error::MissingFlowSlice {
                        direction: "forward",
                        frame,
                    })
                }
            }
            FlowDirection::Backward => {
                if frame >= 1 && frame < self.frames {
                    Ok(frame - 1)
                } else {
                    Err(Error::MissingFlowSlice {
                        direction: "backward",
                        frame,
                    })
                }
            }
        }
    }

    /// The displacement slice attached to `frame` (forward: frame -> frame+1,
    /// backward: frame -> frame-1).
    pub fn slice(&self, frame: usize) -> Result<&VecField2> {
        Ok(&self.slices[self.storage_index(frame)?])
    }

    pub fn slice_mut(&mut self, frame: usize) -> Result<&mut VecField2> {
        let i = self.storage_index(frame)?;
        Ok(&mut self.slices[i])
    }

    /// Raw slice access by storage order (0..T-1).
    pub fn raw_slice(&self, index: usize) -> &VecField2 {
        &self.slices[index]
    }

    pub fn raw_slice_mut(&mut self, index: usize) -> &mut VecField2 {
        &mut self.slices[index]
    }

    /// Frame indices that own a slice.
    pub fn valid_frames(&self) -> std::ops::Range<usize> {
        match self.direction {
            FlowDirection::Forward => 0..self.frames - 1,
            FlowDirection::Backward => 1..self.frames,
        }
    }

    pub fn same_grid(&self, u: &ImageSequence) -> bool {
        self.width == u.width() && self.height == u.height() && self.frames == u.frames()
    }

    pub fn max_abs(&self) -> f64 {
        self.slices
            .iter()
            .fold(0.0, |m, s| m.max(s.x.max_abs()).max(s.y.max_abs()))
    }
}

/// Binary missing-data locus over the spatiotemporal grid. `true` = missing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    frames: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new_empty(width: usize, height: usize, frames: usize) -> Self {
        assert!(width >= 1 && height >= 1 && frames >= 1);
        Mask {
            width,
            height,
            frames,
            data: vec![false; width * height * frames],
        }
    }

    pub fn new_full(width: usize, height: usize, frames: usize) -> Self {
        let mut m = Mask::new_empty(width, height, frames);
        m.data.iter_mut().for_each(|v| *v = true);
        m
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        frames: usize,
        f: impl Fn(usize, usize, usize) -> bool,
    ) -> Self {
        let mut m = Mask::new_empty(width, height, frames);
        for t in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    m.set(x, y, t, f(x, y, t));
                }
            }
        }
        m
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn missing(&self, x: usize, y: usize, frame: usize) -> bool {
        self.data[(frame * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, frame: usize, missing: bool) {
        self.data[(frame * self.height + y) * self.width + x] = missing;
    }

    pub fn count_missing(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn any_missing(&self) -> bool {
        self.data.iter().any(|v| *v)
    }

    pub fn same_grid(&self, u: &ImageSequence) -> bool {
        self.width == u.width() && self.height == u.height() && self.frames == u.frames()
    }
}

/// Forward flow-line difference of `u` at frame `k`:
/// `u_{k+1}(x + v_k(x)) - u_k(x)` per channel, zero where the warp target
/// leaves the domain (clamp-to-self rule). Temporal step is one frame unit.
pub fn lie_forward(
    u: &ImageSequence,
    v: &FlowField,
    k: usize,
    policy: SamplePolicy,
) -> Result<Vec<Field2>> {
    if v.direction() != FlowDirection::Forward || !v.same_grid(u) {
        return Err(Error::dims("forward flow does not match sequence"));
    }
    if k + 1 >= u.frames() {
        return Err(Error::FrameIndex {
            index: k,
            start: 0,
            end: u.frames().saturating_sub(1),
        });
    }
    let slice = v.slice(k)?;
    let mut out = Vec::with_capacity(u.channels());
    for c in 0..u.channels() {
        let cur = u.plane(k, c);
        let next = u.plane(k + 1, c);
        out.push(Field2::from_fn(u.width(), u.height(), |x, y| {
            let (dx, dy) = slice.get(x, y);
            let sx = x as f64 + dx;
            let sy = y as f64 + dy;
            if next.in_domain(sx, sy) {
                next.sample(sx, sy, policy) - cur.get(x, y)
            } else {
                0.0
            }
        }));
    }
    Ok(out)
}

/// Backward flow-line difference of `u` at frame `k`:
/// `u_k(x) - u_{k-1}(x - w_k(x))` per channel, zero at domain exits.
pub fn lie_backward(
    u: &ImageSequence,
    w: &FlowField,
    k: usize,
    policy: SamplePolicy,
) -> Result<Vec<Field2>> {
    if w.direction() != FlowDirection::Backward || !w.same_grid(u) {
        return Err(Error::dims("backward flow does not match sequence"));
    }
    if k == 0 || k >= u.frames() {
        return Err(Error::FrameIndex {
            index: k,
            start: 1,
            end: u.frames(),
        });
    }
    let slice = w.slice(k)?;
    let mut out = Vec::with_capacity(u.channels());
    for c in 0..u.channels() {
        let cur = u.plane(k, c);
        let prev = u.plane(k - 1, c);
        out.push(Field2::from_fn(u.width(), u.height(), |x, y| {
            let (dx, dy) = slice.get(x, y);
            let sx = x as f64 - dx;
            let sy = y as f64 - dy;
            if prev.in_domain(sx, sy) {
                cur.get(x, y) - prev.sample(sx, sy, policy)
            } else {
                0.0
            }
        }));
    }
    Ok(out)
}

/// Spatial gradient by central differences in the interior and one-sided
/// differences on the border rows and columns.
pub fn spatial_gradient(f: &Field2) -> VecField2 {
    let w = f.width();
    let h = f.height();
    let mut g = VecField2::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let gx = if w == 1 {
                0.0
            } else if x == 0 {
                f.get(1, y) - f.get(0, y)
            } else if x == w - 1 {
                f.get(w - 1, y) - f.get(w - 2, y)
            } else {
                0.5 * (f.get(x + 1, y) - f.get(x - 1, y))
            };
            let gy = if h == 1 {
                0.0
            } else if y == 0 {
                f.get(x, 1) - f.get(x, 0)
            } else if y == h - 1 {
                f.get(x, h - 1) - f.get(x, h - 2)
            } else {
                0.5 * (f.get(x, y + 1) - f.get(x, y - 1))
            };
            g.set(x, y, (gx, gy));
        }
    }
    g
}

/// Exact transpose of `spatial_gradient` as a linear operator:
/// `<spatial_gradient(u), g> == <u, gradient_transpose(g)>` for all fields.
/// The negative of this is the discrete divergence matched to the gradient
/// stencil, which keeps analytic gradients identical to finite differences
/// of the energies built on `spatial_gradient`.
pub fn gradient_transpose(g: &VecField2) -> Field2 {
    let w = g.width();
    let h = g.height();
    let mut out = Field2::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let gx = g.x.get(x, y);
            if w > 1 {
                if x == 0 {
                    out.set(0, y, out.get(0, y) - gx);
                    out.set(1, y, out.get(1, y) + gx);
                } else if x == w - 1 {
                    out.set(w - 2, y, out.get(w - 2, y) - gx);
                    out.set(w - 1, y, out.get(w - 1, y) + gx);
                } else {
                    out.set(x - 1, y, out.get(x - 1, y) - 0.5 * gx);
                    out.set(x + 1, y, out.get(x + 1, y) + 0.5 * gx);
                }
            }
            let gy = g.y.get(x, y);
            if h > 1 {
                if y == 0 {
                    out.set(x, 0, out.get(x, 0) - gy);
                    out.set(x, 1, out.get(x, 1) + gy);
                } else if y == h - 1 {
                    out.set(x, h - 2, out.get(x, h - 2) - gy);
                    out.set(x, h - 1, out.get(x, h - 1) + gy);
                } else {
                    out.set(x, y - 1, out.get(x, y - 1) - 0.5 * gy);
                    out.set(x, y + 1, out.get(x, y + 1) + 0.5 * gy);
                }
            }
        }
    }
    out
}

/// Divergence-minus-Jacobian correction of a flow slice:
/// `div(f_k) - det(J f_k)` with the same central/one-sided stencils as
/// `spatial_gradient`. For a backward field this is the factor weighting
/// pulled-back fluxes in the flow-line adjoint.
pub fn flow_divergence_correction(flow: &FlowField, frame: usize) -> Result<Field2> {
    let s = flow.slice(frame)?;
    let gx = spatial_gradient(&s.x);
    let gy = spatial_gradient(&s.y);
    let mut out = Field2::zeros(flow.width(), flow.height());
    for y in 0..flow.height() {
        for x in 0..flow.width() {
            let (axx, axy) = gx.get(x, y); // d(f1)/dx, d(f1)/dy
            let (ayx, ayy) = gy.get(x, y); // d(f2)/dx, d(f2)/dy
            let div = axx + ayy;
            let jac = axx * ayy - axy * ayx;
            out.set(x, y, div - jac);
        }
    }
    Ok(out)
}

/// Reverse the temporal order of a sequence. Involution, bit-exact.
pub fn time_reverse(u: &ImageSequence) -> ImageSequence {
    let mut planes = Vec::with_capacity(u.frames() * u.channels());
    for t in (0..u.frames()).rev() {
        for c in 0..u.channels() {
            planes.push(u.plane(t, c).clone());
        }
    }
    ImageSequence::from_planes(u.width(), u.height(), u.frames(), u.channels(), planes)
        .expect("shape preserved")
}
