//! Integration checks on the spectral quantities: shape of the moment
//! scaling in q, bracket ordering for the critical exponent, and the
//! entropy dimension sitting between the extreme local exponents.

use proptest::prelude::*;
use qdim::dyadic::build_measure;
use qdim::spectra::{beta_n, critical_q, d_zero, qr_bounds};
use qdim::types::{MeasureKind, MeasureSpec};

fn binary_cascade(p: f64) -> MeasureSpec {
    MeasureSpec {
        d: 1,
        kind: MeasureKind::Ifs {
            offsets: vec![vec![0.0], vec![0.5]],
            probabilities: vec![p, 1.0 - p],
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn beta_is_decreasing_and_convex_in_q(p in 0.1f64..0.9, depth in 4u32..8) {
        let m = build_measure(&binary_cascade(p), depth, 1e-12).unwrap();
        let qs: Vec<f64> = (0..=20).map(|k| k as f64 * 0.25).collect();
        let vals: Vec<f64> = qs.iter().map(|&q| beta_n(&m, q, depth)).collect();
        for w in vals.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "not decreasing: {} -> {}", w[0], w[1]);
        }
        for w in vals.windows(3) {
            // Midpoint below the chord.
            prop_assert!(w[1] <= 0.5 * (w[0] + w[2]) + 1e-9);
        }
    }

    #[test]
    fn critical_exponent_sits_in_its_bracket(p in 0.15f64..0.85, neg in prop::bool::ANY) {
        let m = build_measure(&binary_cascade(p), 10, 1e-12).unwrap();
        let dim_infty = -(p.max(1.0 - p)).log2();
        let r = if neg { -0.5 * dim_infty } else { 0.7 };
        let cq = critical_q(&m, r, "").unwrap();
        prop_assert!(cq.bracket.0 <= cq.bracket.1);
        prop_assert!(cq.bracket.0 - 1e-9 <= cq.q_r && cq.q_r <= cq.bracket.1 + 1e-9);
        if neg {
            prop_assert!(cq.q_r > 1.0, "negative order exponent must exceed 1, got {}", cq.q_r);
            prop_assert!(cq.d_r > 0.0);
        } else {
            prop_assert!(cq.q_r > 0.0 && cq.q_r < 1.0);
        }
    }

    #[test]
    fn entropy_dimension_lies_between_extreme_exponents(p in 0.15f64..0.85) {
        let m = build_measure(&binary_cascade(p), 10, 1e-12).unwrap();
        let dz = d_zero(&m);
        let lo = -(p.max(1.0 - p)).log2();
        let hi = -(p.min(1.0 - p)).log2();
        prop_assert!(dz.value >= lo - 1e-6 && dz.value <= hi + 1e-6,
            "D_0 {} outside [{lo}, {hi}]", dz.value);
    }
}

#[test]
fn bracket_construction_rejects_orders_at_or_below_threshold() {
    // Negative orders need dim_infty + r > 0.
    assert!(qr_bounds(2.0, 0.5, -0.5).is_err());
    assert!(qr_bounds(2.0, 0.5, -0.4).is_ok());
    let (lo, hi) = qr_bounds(2.0, 0.5, -0.4).unwrap();
    assert!(1.0 < lo && lo <= hi);
}

#[test]
fn uniform_cascade_spectrum_is_linear() {
    let m = build_measure(&binary_cascade(0.5), 8, 1e-12).unwrap();
    for q in [0.0, 0.5, 1.0, 2.0, 3.0] {
        // beta(q) = (1 - q) for the even split.
        assert!((beta_n(&m, q, 8) - (1.0 - q)).abs() <= 1e-9);
    }
}
