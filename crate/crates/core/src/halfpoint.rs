//! Edge-based discrete TV energies and their exact gradients.
//!
//! Each pair of 4-neighbors (an edge) carries a squared-magnitude estimate
//! at the half-point between them: the direct difference along the edge plus
//! the average of the central-difference estimates of the remaining
//! derivative components at the two endpoints. The energy is the penalty of
//! that magnitude summed over edges (channels summed inside the penalty),
//! and the gradient is its exact derivative, so finite differences of the
//! energy reproduce the gradient to roundoff. The leading part of the
//! gradient is the classical half-point diffusion stencil
//! `sum_r A_((r+s)/2) (u(r) - u(s))` with `A` the penalty slope.

use crate::energy::Penalty;
use crate::grid::Field2;

/// Central/one-sided derivative estimate along x at a pixel.
#[inline]
fn tx_at(p: &Field2, x: usize, y: usize) -> f64 {
    let w = p.width();
    if w == 1 {
        0.0
    } else if x == 0 {
        p.get(1, y) - p.get(0, y)
    } else if x == w - 1 {
        p.get(w - 1, y) - p.get(w - 2, y)
    } else {
        0.5 * (p.get(x + 1, y) - p.get(x - 1, y))
    }
}

#[inline]
fn ty_at(p: &Field2, x: usize, y: usize) -> f64 {
    let h = p.height();
    if h == 1 {
        0.0
    } else if y == 0 {
        p.get(x, 1) - p.get(x, 0)
    } else if y == h - 1 {
        p.get(x, h - 1) - p.get(x, h - 2)
    } else {
        0.5 * (p.get(x, y + 1) - p.get(x, y - 1))
    }
}

/// Add `coeff * d(tx(x,y))/d(plane)` into `grad`.
fn spread_tx(grad: &mut Field2, x: usize, y: usize, coeff: f64) {
    let w = grad.width();
    if w == 1 {
        return;
    }
    if x == 0 {
        grad.add_at(1, y, coeff);
        grad.add_at(0, y, -(coeff));
    } else if x == w - 1 {
        grad.add_at(w - 1, y, coeff);
        grad.add_at(w - 2, y, -(coeff));
    } else {
        grad.add_at(x + 1, y, 0.5 * coeff);
        grad.add_at(x - 1, y, -(0.5 * coeff));
    }
}

fn spread_ty(grad: &mut Field2, x: usize, y: usize, coeff: f64) {
    let h = grad.height();
    if h == 1 {
        return;
    }
    if y == 0 {
        grad.add_at(x, 1, coeff);
        grad.add_at(x, 0, -(coeff));
    } else if y == h - 1 {
        grad.add_at(x, h - 1, coeff);
        grad.add_at(x, h - 2, -(coeff));
    } else {
        grad.add_at(x, y + 1, 0.5 * coeff);
        grad.add_at(x, y - 1, -(0.5 * coeff));
    }
}

/// Half-point squared magnitude summed over planes for the horizontal edge
/// (x, y)-(x+1, y), plus the per-plane pieces needed by the gradient.
struct EdgeTerms {
    magnitude: f64,
}

fn edge2d_terms(
    planes: &[&Field2],
    x: usize,
    y: usize,
    horizontal: bool,
    d: &mut Vec<f64>,
    m: &mut Vec<f64>,
) -> EdgeTerms {
    d.clear();
    m.clear();
    let mut mag = 0.0;
    for p in planes {
        let (dd, mm) = if horizontal {
            let dd = p.get(x + 1, y) - p.get(x, y);
            let mm = 0.5 * (ty_at(p, x, y) + ty_at(p, x + 1, y));
            (dd, mm)
        } else {
            let dd = p.get(x, y + 1) - p.get(x, y);
            let mm = 0.5 * (tx_at(p, x, y) + tx_at(p, x, y + 1));
            (dd, mm)
        };
        mag += dd * dd + mm * mm;
        d.push(dd);
        m.push(mm);
    }
    EdgeTerms { magnitude: mag }
}

/// `1/2 sum_edges phi(|grad|^2 at half-point)`, channels coupled inside phi.
pub(crate) fn tv2d_energy(planes: &[&Field2], penalty: &Penalty) -> f64 {
    let w = planes[0].width();
    let h = planes[0].height();
    let mut d = Vec::with_capacity(planes.len());
    let mut m = Vec::with_capacity(planes.len());
    let mut acc = 0.0;
    for y in 0..h {
        for x in 0..w.saturating_sub(1) {
            let e = edge2d_terms(planes, x, y, true, &mut d, &mut m);
            acc += penalty.value(e.magnitude);
        }
    }
    for y in 0..h.saturating_sub(1) {
        for x in 0..w {
            let e = edge2d_terms(planes, x, y, false, &mut d, &mut m);
            acc += penalty.value(e.magnitude);
        }
    }
    0.5 * acc
}

/// Exact gradient of `tv2d_energy` with respect to every plane.
pub(crate) fn tv2d_gradient(planes: &[&Field2], penalty: &Penalty) -> Vec<Field2> {
    let w = planes[0].width();
    let h = planes[0].height();
    let mut grads: Vec<Field2> = planes.iter().map(|_| Field2::zeros(w, h)).collect();
    let mut d = Vec::with_capacity(planes.len());
    let mut m = Vec::with_capacity(planes.len());
    for y in 0..h {
        for x in 0..w.saturating_sub(1) {
            let e = edge2d_terms(planes, x, y, true, &mut d, &mut m);
            let a = penalty.diffusivity(e.magnitude);
            for (c, g) in grads.iter_mut().enumerate() {
                let flux = a * d[c];
                g.add_at(x + 1, y, flux);
                g.add_at(x, y, -(flux));
                let mc = a * m[c] * 0.5;
                spread_ty(g, x, y, mc);
                spread_ty(g, x + 1, y, mc);
            }
        }
    }
    for y in 0..h.saturating_sub(1) {
        for x in 0..w {
            let e = edge2d_terms(planes, x, y, false, &mut d, &mut m);
            let a = penalty.diffusivity(e.magnitude);
            for (c, g) in grads.iter_mut().enumerate() {
                let flux = a * d[c];
                g.add_at(x, y + 1, flux);
                g.add_at(x, y, -(flux));
                let mc = a * m[c] * 0.5;
                spread_tx(g, x, y, mc);
                spread_tx(g, x, y + 1, mc);
            }
        }
    }
    grads
}

#[inline]
fn tt_at(slices: &[&Field2], k: usize, x: usize, y: usize) -> f64 {
    let n = slices.len();
    if n == 1 {
        0.0
    } else if k == 0 {
        slices[1].get(x, y) - slices[0].get(x, y)
    } else if k == n - 1 {
        slices[n - 1].get(x, y) - slices[n - 2].get(x, y)
    } else {
        0.5 * (slices[k + 1].get(x, y) - slices[k - 1].get(x, y))
    }
}

fn spread_tt(grads: &mut [Field2], k: usize, x: usize, y: usize, coeff: f64) {
    let n = grads.len();
    if n == 1 {
        return;
    }
    if k == 0 {
        grads[1].add_at(x, y, coeff);
        grads[0].add_at(x, y, -(coeff));
    } else if k == n - 1 {
        grads[n - 1].add_at(x, y, coeff);
        grads[n - 2].add_at(x, y, -(coeff));
    } else {
        grads[k + 1].add_at(x, y, 0.5 * coeff);
        grads[k - 1].add_at(x, y, -(0.5 * coeff));
    }
}

/// Spatiotemporal variant over a stack of slices per component. Spatial
/// edges gain an averaged temporal-derivative estimate; temporal edges pair
/// the same pixel across consecutive slices with averaged spatial estimates.
/// Components are coupled inside the penalty.
pub(crate) fn tv3d_energy(components: &[Vec<&Field2>], penalty: &Penalty) -> f64 {
    tv3d_layer_totals(components, penalty).iter().sum::<f64>() * 0.5
}

/// Raw penalty sums per layer (no `1/2` factor): one entry per slice for
/// its spatial edges, then one per consecutive slice pair for the temporal
/// edges. Reversing the slice order permutes these totals without changing
/// any of them.
pub(crate) fn tv3d_layer_totals(components: &[Vec<&Field2>], penalty: &Penalty) -> Vec<f64> {
    let slices = components[0].len();
    let w = components[0][0].width();
    let h = components[0][0].height();
    let mut totals = Vec::with_capacity(2 * slices);
    for k in 0..slices {
        let mut acc = 0.0;
        for y in 0..h {
            for x in 0..w.saturating_sub(1) {
                let mut mag = 0.0;
                for comp in components {
                    let p = comp[k];
                    let dd = p.get(x + 1, y) - p.get(x, y);
                    let my = 0.5 * (ty_at(p, x, y) + ty_at(p, x + 1, y));
                    let mt = 0.5 * (tt_at(comp, k, x, y) + tt_at(comp, k, x + 1, y));
                    mag += dd * dd + my * my + mt * mt;
                }
                acc += penalty.value(mag);
            }
        }
        for y in 0..h.saturating_sub(1) {
            for x in 0..w {
                let mut mag = 0.0;
                for comp in components {
                    let p = comp[k];
                    let dd = p.get(x, y + 1) - p.get(x, y);
                    let mx = 0.5 * (tx_at(p, x, y) + tx_at(p, x, y + 1));
                    let mt = 0.5 * (tt_at(comp, k, x, y) + tt_at(comp, k, x, y + 1));
                    mag += dd * dd + mx * mx + mt * mt;
                }
                acc += penalty.value(mag);
            }
        }
        totals.push(acc);
    }
    for k in 0..slices.saturating_sub(1) {
        let mut acc = 0.0;
        for y in 0..h {
            for x in 0..w {
                let mut mag = 0.0;
                for comp in components {
                    let dd = comp[k + 1].get(x, y) - comp[k].get(x, y);
                    let mx = 0.5 * (tx_at(comp[k], x, y) + tx_at(comp[k + 1], x, y));
                    let my = 0.5 * (ty_at(comp[k], x, y) + ty_at(comp[k + 1], x, y));
                    mag += dd * dd + mx * mx + my * my;
                }
                acc += penalty.value(mag);
            }
        }
        totals.push(acc);
    }
    totals
}

/// Exact gradient of `tv3d_energy`, indexed `[component][slice]`.
pub(crate) fn tv3d_gradient(components: &[Vec<&Field2>], penalty: &Penalty) -> Vec<Vec<Field2>> {
    let slices = components[0].len();
    let w = components[0][0].width();
    let h = components[0][0].height();
    let mut grads: Vec<Vec<Field2>> = components
        .iter()
        .map(|comp| comp.iter().map(|_| Field2::zeros(w, h)).collect())
        .collect();

    for k in 0..slices {
        for y in 0..h {
            for x in 0..w.saturating_sub(1) {
                let mut mag = 0.0;
                let mut terms = Vec::with_capacity(components.len());
                for comp in components {
                    let p = comp[k];
                    let dd = p.get(x + 1, y) - p.get(x, y);
                    let my = 0.5 * (ty_at(p, x, y) + ty_at(p, x + 1, y));
                    let mt = 0.5 * (tt_at(comp, k, x, y) + tt_at(comp, k, x + 1, y));
                    mag += dd * dd + my * my + mt * mt;
                    terms.push((dd, my, mt));
                }
                let a = penalty.diffusivity(mag);
                for (c, &(dd, my, mt)) in terms.iter().enumerate() {
                    let g = &mut grads[c];
                    let flux = a * dd;
                    g[k].add_at(x + 1, y, flux);
                    g[k].add_at(x, y, -(flux));
                    let myc = a * my * 0.5;
                    spread_ty(&mut g[k], x, y, myc);
                    spread_ty(&mut g[k], x + 1, y, myc);
                    let mtc = a * mt * 0.5;
                    spread_tt(g, k, x, y, mtc);
                    spread_tt(g, k, x + 1, y, mtc);
                }
            }
        }
        for y in 0..h.saturating_sub(1) {
            for x in 0..w {
                let mut mag = 0.0;
                let mut terms = Vec::with_capacity(components.len());
                for comp in components {
                    let p = comp[k];
                    let dd = p.get(x, y + 1) - p.get(x, y);
                    let mx = 0.5 * (tx_at(p, x, y) + tx_at(p, x, y + 1));
                    let mt = 0.5 * (tt_at(comp, k, x, y) + tt_at(comp, k, x, y + 1));
                    mag += dd * dd + mx * mx + mt * mt;
                    terms.push((dd, mx, mt));
                }
                let a = penalty.diffusivity(mag);
                for (c, &(dd, mx, mt)) in terms.iter().enumerate() {
                    let g = &mut grads[c];
                    let flux = a * dd;
                    g[k].add_at(x, y + 1, flux);
                    g[k].add_at(x, y, -(flux));
                    let mxc = a * mx * 0.5;
                    spread_tx(&mut g[k], x, y, mxc);
                    spread_tx(&mut g[k], x, y + 1, mxc);
                    let mtc = a * mt * 0.5;
                    spread_tt(g, k, x, y, mtc);
                    spread_tt(g, k, x, y + 1, mtc);
                }
            }
        }
    }
    for k in 0..slices.saturating_sub(1) {
        for y in 0..h {
            for x in 0..w {
                let mut mag = 0.0;
                let mut terms = Vec::with_capacity(components.len());
                for comp in components {
                    let dd = comp[k + 1].get(x, y) - comp[k].get(x, y);
                    let mx = 0.5 * (tx_at(comp[k], x, y) + tx_at(comp[k + 1], x, y));
                    let my = 0.5 * (ty_at(comp[k], x, y) + ty_at(comp[k + 1], x, y));
                    mag += dd * dd + mx * mx + my * my;
                    terms.push((dd, mx, my));
                }
                let a = penalty.diffusivity(mag);
                for (c, &(dd, mx, my)) in terms.iter().enumerate() {
                    let g = &mut grads[c];
                    let flux = a * dd;
                    g[k + 1].add_at(x, y, flux);
                    g[k].add_at(x, y, -(flux));
                    let mxc = a * mx * 0.5;
                    spread_tx(&mut g[k], x, y, mxc);
                    spread_tx(&mut g[k + 1], x, y, mxc);
                    let myc = a * my * 0.5;
                    spread_ty(&mut g[k], x, y, myc);
                    spread_ty(&mut g[k + 1], x, y, myc);
                }
            }
        }
    }
    grads
}
