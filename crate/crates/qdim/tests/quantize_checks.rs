//! Integration checks on quantizer optimization: error monotonicity in
//! codebook size, the closed-form moment bound under random codebooks and
//! orders, and the mixture sandwich under random splits.

use proptest::prelude::*;
use qdim::density::{Density1d, PiecewiseConst, Uniform};
use qdim::quantize::{
    error_curve, lebesgue_bound_check, mixture_bounds_check, OptimizeOpts, Strategy, Target,
};

fn dp_opts() -> OptimizeOpts {
    OptimizeOpts {
        strategy: Strategy::Dp1d,
        grid_g: 12,
        ..OptimizeOpts::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn error_is_nonincreasing_in_codebook_size(r in -0.9f64..1.5) {
        let t = Target::raw_density(&Uniform);
        let curve = error_curve(&t, r, &[2, 4, 8, 16, 32], None, &dp_opts()).unwrap();
        prop_assert!(!curve.diverged);
        for w in curve.points.windows(2) {
            prop_assert!(w[1].error <= w[0].error + 1e-12,
                "r={r}: e({}) = {} > e({}) = {}", w[1].n, w[1].error, w[0].n, w[0].error);
        }
    }

    #[test]
    fn uniform_moment_bound_holds_for_random_codebooks(
        pts in prop::collection::vec(0.001f64..1.0, 1..80),
        u in 0.05f64..0.95,
    ) {
        let r = -u * 0.98 - 0.01;
        prop_assume!(r > -1.0 && r < 0.0);
        let chk = lebesgue_bound_check(&pts, r).unwrap();
        prop_assert!(chk.holds, "lhs {} > rhs {} at r={r} m={}", chk.lhs, chk.rhs, chk.m);
    }

    #[test]
    fn mixture_sandwich_holds_for_random_splits(
        a in 0.3f64..0.7,
        s in 0.2f64..0.8,
    ) {
        let left = PiecewiseConst::new("left", vec![(0.0, a, 1.0)]);
        let right = PiecewiseConst::new("right", vec![(a, 1.0, 1.0)]);
        let parts: Vec<(f64, &dyn Density1d)> = vec![(s, &left), (1.0 - s, &right)];
        let rep = mixture_bounds_check(&parts, 6, &[3, 3], -0.5, 0.02, &dp_opts()).unwrap();
        prop_assert!(rep.upper_holds, "upper: V {} vs {}", rep.v_mix, rep.upper);
        prop_assert!(rep.lower_holds, "lower: V {} vs {}", rep.v_mix, rep.lower);
    }
}

#[test]
fn error_curve_flags_divergence_without_failing() {
    let reg = qdim::density::example_density("ex29").unwrap();
    let t = Target::density(&reg);
    let curve = error_curve(&t, -0.6, &[2, 4, 8], None, &dp_opts()).unwrap();
    assert!(curve.diverged);
    assert!(curve.points.is_empty());
    assert!(curve.d_hat.is_nan());
}
