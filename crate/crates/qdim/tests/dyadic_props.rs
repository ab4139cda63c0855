//! Property tests for measure construction: conservation of mass across
//! levels, atom bookkeeping, and local scaling estimates staying inside
//! their geometric range.

use proptest::prelude::*;
use qdim::dyadic::{build_measure, dim_infty_estimate};
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
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cascade_levels_conserve_mass(p in 0.05f64..0.95, depth in 2u32..8) {
        let m = build_measure(&binary_cascade(p), depth, 1e-12).unwrap();
        for n in 1..=depth {
            let total: f64 = m.level(n).mass.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-9, "level {n} mass {total}");
        }
    }

    #[test]
    fn cascade_max_mass_is_nonincreasing(p in 0.05f64..0.95, depth in 4u32..9) {
        let m = build_measure(&binary_cascade(p), depth, 1e-12).unwrap();
        let mut prev = 1.0f64;
        for n in 1..=depth {
            let mx = m.max_mass(n);
            prop_assert!(mx <= prev + 1e-12);
            prev = mx;
        }
    }

    #[test]
    fn binary_cascade_scaling_matches_dominant_branch(p in 0.1f64..0.9, depth in 5u32..9) {
        let m = build_measure(&binary_cascade(p), depth, 1e-12).unwrap();
        let est = dim_infty_estimate(&m).unwrap();
        let exact = -(p.max(1.0 - p)).log2();
        // One branch dominates every level, so the slope is exact.
        prop_assert!((est.value - exact).abs() <= 1e-9, "est {} exact {}", est.value, exact);
        prop_assert!(est.value >= -1e-12 && est.value <= 1.0 + 1e-12);
    }

    #[test]
    fn atomic_masses_are_preserved(w0 in 0.1f64..0.9, x0 in 0.05f64..0.45, x1 in 0.55f64..0.95) {
        let spec = MeasureSpec {
            d: 1,
            kind: MeasureKind::Atomic {
                points: vec![vec![x0], vec![x1]],
                weights: vec![w0, 1.0 - w0],
            },
        };
        let m = build_measure(&spec, 5, 1e-12).unwrap();
        let (pts, ws) = m.atoms.as_ref().expect("atomic build keeps its atoms");
        prop_assert_eq!(pts.len(), 2);
        let total: f64 = ws.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        for n in 1..=5 {
            let level_total: f64 = m.level(n).mass.iter().sum();
            prop_assert!((level_total - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn density_builds_carry_unit_mass_per_level() {
    for name in ["uniform", "linear2x", "ex28", "ex29"] {
        let spec = MeasureSpec {
            d: 1,
            kind: MeasureKind::Density { name: name.into() },
        };
        let m = build_measure(&spec, 10, 1e-12).unwrap();
        for n in 1..=10 {
            let total: f64 = m.level(n).mass.iter().sum();
            assert!(
                (total - 1.0).abs() <= 1e-6,
                "{name} level {n} mass {total}"
            );
        }
    }
}
