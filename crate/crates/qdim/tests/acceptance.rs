//! Acceptance gate: every named verification check runs at its stated
//! tolerance and budget, printing one PASS/FAIL line per check plus the
//! assertion detail (visible with --nocapture, or on failure).

use qdim::{run_criterion, ExecMode};

fn run(id: &str) {
    let rep = run_criterion(id, ExecMode::default()).expect("known check id");
    for line in &rep.lines {
        println!("  {line}");
    }
    println!(
        "criterion {}: {} ({:.1}s)",
        rep.id,
        if rep.passed { "PASS" } else { "FAIL" },
        rep.seconds
    );
    assert!(rep.passed, "criterion {} failed, see lines above", rep.id);
}

#[test]
fn criterion_01_cascade_lq_exactness() {
    run("cascade-lq-exactness");
}

#[test]
fn criterion_02_menger_critical_exponent() {
    run("menger-critical-exponent");
}

#[test]
fn criterion_03_uniform_negative_order_error_law() {
    run("uniform-negative-order-error-law");
}

#[test]
fn criterion_04_geometric_mean_error_law() {
    run("geometric-mean-error-law");
}

#[test]
fn criterion_05_linear_density_coefficient_ratio() {
    run("linear-density-coefficient-ratio");
}

#[test]
fn criterion_06_divergence_detection() {
    run("divergence-detection");
}

#[test]
fn criterion_07_dim_infty_estimates() {
    run("dim-infty-estimates");
}

#[test]
fn criterion_08_partition_chain_consistency() {
    run("partition-chain-consistency");
}

#[test]
fn criterion_09_greedy_matches_exhaustive() {
    run("greedy-matches-exhaustive");
}

#[test]
fn criterion_10_inequality_suite() {
    run("inequality-suite");
}

#[test]
fn criterion_11_cascade_positive_order_dimension() {
    run("cascade-positive-order-dimension");
}

#[test]
fn criterion_12_density_norm_classification() {
    run("density-norm-classification");
}
