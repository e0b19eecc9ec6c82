//! Property tests for the structural invariants of the field operations.

use proptest::prelude::*;

use flowinpaint::grid::{
    gradient_transpose, spatial_gradient, time_reverse, Field2, ImageSequence, Interpolation,
    Mask, SamplePolicy, VecField2,
};
use flowinpaint::multires::{coarsen_mask, MaskCoarsening};

fn field_strategy(w: usize, h: usize) -> impl Strategy<Value = Field2> {
    proptest::collection::vec(0.0..1.0f64, w * h)
        .prop_map(move |data| Field2::from_vec(w, h, data))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interpolation_reproduces_constants_and_grid_points(
        c in 0.0..1.0f64,
        x in 0.0..6.0f64,
        y in 0.0..5.0f64,
        field in field_strategy(7, 6),
        bicubic in any::<bool>(),
    ) {
        let policy = SamplePolicy {
            interpolation: if bicubic { Interpolation::Bicubic } else { Interpolation::Bilinear },
        };
        let constant = Field2::constant(7, 6, c);
        prop_assert!((constant.sample(x, y, policy) - c).abs() < 1e-12);

        let gx = x.round().clamp(0.0, 6.0);
        let gy = y.round().clamp(0.0, 5.0);
        let v = field.sample(gx, gy, policy);
        prop_assert_eq!(v, field.get(gx as usize, gy as usize));
    }

    #[test]
    fn time_reverse_is_a_bit_exact_involution(
        frames in 1usize..5,
        data in proptest::collection::vec(0.0..1.0f64, 4 * 3 * 4 * 2),
    ) {
        let u = ImageSequence::from_fn(4, 3, frames, 2, |x, y, t, c| {
            data[((t * 2 + c) * 3 + y) * 4 + x]
        });
        prop_assert_eq!(time_reverse(&time_reverse(&u)), u);
    }

    #[test]
    fn gradient_and_its_transpose_are_adjoint(
        u in field_strategy(6, 5),
        fx in field_strategy(6, 5),
        fy in field_strategy(6, 5),
    ) {
        let g = spatial_gradient(&u);
        let f = VecField2 { x: fx, y: fy };
        let mut lhs = 0.0;
        for y in 0..5 {
            for x in 0..6 {
                lhs += g.x.get(x, y) * f.x.get(x, y) + g.y.get(x, y) * f.y.get(x, y);
            }
        }
        let dt = gradient_transpose(&f);
        let mut rhs = 0.0;
        for y in 0..5 {
            for x in 0..6 {
                rhs += u.get(x, y) * dt.get(x, y);
            }
        }
        prop_assert!((lhs - rhs).abs() < 1e-10, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn mask_coarsening_stays_binary_and_nearest_has_provenance(
        bits in proptest::collection::vec(any::<bool>(), 12 * 10 * 2),
        threshold in any::<bool>(),
    ) {
        let mask = Mask::from_fn(12, 10, 2, |x, y, t| bits[(t * 10 + y) * 12 + x]);
        let method = if threshold { MaskCoarsening::Threshold } else { MaskCoarsening::Nearest };
        let coarse = coarsen_mask(&mask, 6, 5, method);
        // binary by type; provenance for the nearest rule
        if method == MaskCoarsening::Nearest {
            for t in 0..2 {
                for y in 0..5 {
                    for x in 0..6 {
                        if coarse.missing(x, y, t) {
                            let fx = (((x as f64 + 0.5) * 2.0 - 0.5).round() as usize).min(11);
                            let fy = (((y as f64 + 0.5) * 2.0 - 0.5).round() as usize).min(9);
                            prop_assert!(mask.missing(fx, fy, t));
                        }
                    }
                }
            }
        }
        // both methods keep an empty mask empty
        if !mask.any_missing() {
            prop_assert!(!coarse.any_missing());
        }
    }
}
