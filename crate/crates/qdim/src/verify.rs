//! Named verification checks with frozen reference values and fixed
//! tolerances.
//!
//! Each check exercises one documented behavior end to end (spectra,
//! quantizers, partitions, density classification) and reports a list of
//! pass/fail detail lines plus a wall-clock budget line. Checks never
//! panic on expectation failures; they accumulate lines so a driver can
//! render the full picture even when something is red. Reference values
//! fall in three classes: closed forms evaluated inline (cascade spectra,
//! uniform error laws), independently derived constants (critical
//! exponents, density functionals), and frozen outputs of the symbolic
//! partition shortcuts recorded when the protocol was fixed.

use crate::density::{example_density, Density1d, PiecewiseConst, Uniform};
use crate::dyadic::{build_measure, dim_infty_estimate};
use crate::exec::ExecMode;
use crate::numerics::{deep_half, lsq};
use crate::oracle::cascade_beta;
use crate::partition::{exhaustive_gamma, greedy_partition, CascadeEnvelope};
use crate::quantize::{
    distortion, error_curve, lebesgue_bound_check, mixture_bounds_check, optimize_codebook,
    OptimizeOpts, Strategy, Target,
};
use crate::spectra::{beta_n, critical_q, d_zero};
use crate::types::{MeasureKind, MeasureSpec, Norm, QdimError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use std::time::Instant;

/// Outcome of one named check.
#[derive(Debug, Clone, Serialize)]
pub struct CriterionReport {
    pub id: String,
    pub passed: bool,
    /// Wall-clock runtime of the check body.
    pub seconds: f64,
    /// Budget the runtime is asserted against.
    pub budget_seconds: f64,
    /// One line per assertion, prefixed with its outcome.
    pub lines: Vec<String>,
}

/// Accumulates assertion lines; failures mark the report, never panic.
struct Checks {
    lines: Vec<String>,
    passed: bool,
}

impl Checks {
    fn new() -> Self {
        Checks {
            lines: Vec::new(),
            passed: true,
        }
    }

    fn push(&mut self, ok: bool, detail: String) {
        self.lines
            .push(format!("[{}] {detail}", if ok { " ok " } else { "FAIL" }));
        self.passed &= ok;
    }

    fn note(&mut self, detail: String) {
        self.lines.push(format!("[note] {detail}"));
    }

    /// |got - want| <= tol.
    fn approx(&mut self, label: &str, got: f64, want: f64, tol: f64) {
        let ok = (got - want).abs() <= tol;
        self.push(
            ok,
            format!("{label}: got {got:.6}, want {want:.6} +- {tol:.0e}"),
        );
    }

    /// |got - want| <= rtol * max(1, |want|).
    fn rel(&mut self, label: &str, got: f64, want: f64, rtol: f64) {
        let ok = (got - want).abs() <= rtol * want.abs().max(1.0);
        self.push(
            ok,
            format!("{label}: got {got:.12}, want {want:.12} rel {rtol:.0e}"),
        );
    }

    fn is_true(&mut self, label: &str, ok: bool) {
        self.push(ok, label.to_string());
    }
}

const MENGER_PROBS: [f64; 4] = [0.66, 0.2, 0.08, 0.06];

fn menger_spec() -> MeasureSpec {
    MeasureSpec {
        d: 3,
        kind: MeasureKind::Ifs {
            offsets: vec![
                vec![0.0, 0.0, 0.0],
                vec![0.5, 0.0, 0.0],
                vec![0.0, 0.5, 0.0],
                vec![0.0, 0.0, 0.5],
            ],
            probabilities: MENGER_PROBS.to_vec(),
        },
    }
}

fn binary_cascade_spec(p: f64) -> MeasureSpec {
    MeasureSpec {
        d: 1,
        kind: MeasureKind::Ifs {
            offsets: vec![vec![0.0], vec![0.5]],
            probabilities: vec![p, 1.0 - p],
        },
    }
}

fn density_spec(name: &str) -> MeasureSpec {
    MeasureSpec {
        d: 1,
        kind: MeasureKind::Density { name: name.into() },
    }
}

/// The twelve acceptance checks, in declaration order.
pub const CRITERION_IDS: [&str; 12] = [
    "cascade-lq-exactness",
    "menger-critical-exponent",
    "uniform-negative-order-error-law",
    "geometric-mean-error-law",
    "linear-density-coefficient-ratio",
    "divergence-detection",
    "dim-infty-estimates",
    "partition-chain-consistency",
    "greedy-matches-exhaustive",
    "inequality-suite",
    "cascade-positive-order-dimension",
    "density-norm-classification",
];

/// Extra randomized check exercised by the bounds suite.
pub const BOUNDS_CHECK_ID: &str = "bracket-bounds-random-cascades";

/// Every addressable check id: the twelve criteria plus the bounds sweep.
pub fn criterion_ids() -> Vec<&'static str> {
    let mut ids = CRITERION_IDS.to_vec();
    ids.push(BOUNDS_CHECK_ID);
    ids
}

fn budget_seconds(id: &str) -> f64 {
    match id {
        "cascade-lq-exactness" => 30.0,
        "menger-critical-exponent" => 60.0,
        "uniform-negative-order-error-law" => 120.0,
        "geometric-mean-error-law" => 60.0,
        "linear-density-coefficient-ratio" => 180.0,
        "divergence-detection" => 30.0,
        "dim-infty-estimates" => 60.0,
        "partition-chain-consistency" => 120.0,
        "greedy-matches-exhaustive" => 120.0,
        "inequality-suite" => 180.0,
        "cascade-positive-order-dimension" => 300.0,
        "density-norm-classification" => 60.0,
        _ => 120.0,
    }
}

/// Runs one check by id; expectation failures land in the report, only
/// malformed ids error.
pub fn run_criterion(id: &str, mode: ExecMode) -> Result<CriterionReport, QdimError> {
    let budget = budget_seconds(id);
    let mut c = Checks::new();
    let start = Instant::now();
    let body: Result<(), QdimError> = match id {
        "cascade-lq-exactness" => c01_cascade_lq(&mut c),
        "menger-critical-exponent" => c02_critical_exponent(&mut c),
        "uniform-negative-order-error-law" => c03_uniform_negative(&mut c),
        "geometric-mean-error-law" => c04_geometric_mean(&mut c),
        "linear-density-coefficient-ratio" => c05_coefficient_ratio(&mut c),
        "divergence-detection" => c06_divergence(&mut c, mode),
        "dim-infty-estimates" => c07_dim_infty(&mut c),
        "partition-chain-consistency" => c08_partition_chain(&mut c),
        "greedy-matches-exhaustive" => c09_greedy_exhaustive(&mut c),
        "inequality-suite" => c10_inequalities(&mut c),
        "cascade-positive-order-dimension" => c11_positive_order(&mut c, mode),
        "density-norm-classification" => c12_norm_classification(&mut c),
        BOUNDS_CHECK_ID => cx_bracket_bounds(&mut c),
        other => {
            return Err(QdimError::InvalidSpec(format!(
                "unknown verification check {other:?}"
            )))
        }
    };
    if let Err(e) = body {
        c.push(false, format!("check aborted: {e}"));
    }
    let seconds = start.elapsed().as_secs_f64();
    c.push(
        seconds <= budget,
        format!("runtime {seconds:.1}s within {budget:.0}s budget"),
    );
    Ok(CriterionReport {
        id: id.to_string(),
        passed: c.passed,
        seconds,
        budget_seconds: budget,
        lines: c.lines,
    })
}

/// Runs a named suite: "all" (criteria plus the bounds sweep), "cascade"
/// (cascade identities), or "bounds" (random bracket sweep). Failures of
/// individual checks never abort the remainder.
pub fn run_suite(suite: &str, mode: ExecMode) -> Result<Vec<CriterionReport>, QdimError> {
    let ids: Vec<&str> = match suite {
        "all" => criterion_ids(),
        "cascade" => vec![
            "cascade-lq-exactness",
            "menger-critical-exponent",
            "partition-chain-consistency",
            "cascade-positive-order-dimension",
        ],
        "bounds" => vec![BOUNDS_CHECK_ID],
        other => {
            return Err(QdimError::InvalidSpec(format!(
                "unknown suite {other:?} (expected all, cascade, or bounds)"
            )))
        }
    };
    ids.into_iter().map(|id| run_criterion(id, mode)).collect()
}

// ---------------------------------------------------------------------------
// Check bodies.

/// Stored cascade spectra match the closed form log2(sum p_i^q) at every
/// level, not merely in the limit.
fn c01_cascade_lq(c: &mut Checks) -> Result<(), QdimError> {
    let m = build_measure(&menger_spec(), 10, 1e-12)?;
    for &q in &[0.0, 0.5, 1.0, 1.87, 2.5] {
        let want = cascade_beta(&MENGER_PROBS, q)?;
        for &n in &[2u32, 5, 10] {
            c.rel(&format!("beta_n(q={q}, n={n})"), beta_n(&m, q, n), want, 1e-9);
        }
    }
    Ok(())
}

/// Critical exponent, dimension identity, bracket membership, and entropy
/// dimension at order -1/2 on the weighted sponge cascade.
fn c02_critical_exponent(c: &mut Checks) -> Result<(), QdimError> {
    let m = build_measure(&menger_spec(), 10, 1e-12)?;
    let cq = critical_q(&m, -0.5, "")?;
    c.approx("q_r at r=-0.5", cq.q_r, 1.870, 0.005);
    c.approx("D_r = r q_r/(1-q_r)", cq.d_r, 1.075, 0.010);
    c.is_true(
        &format!(
            "q_r {:.4} inside bracket ({:.4}, {:.4})",
            cq.q_r, cq.bracket.0, cq.bracket.1
        ),
        cq.bracket.0 <= cq.q_r && cq.q_r <= cq.bracket.1,
    );
    c.approx("bracket lower bound", cq.bracket.0, 4.0 / 3.0, 0.01);
    c.approx("bracket upper bound", cq.bracket.1, 15.08, 0.05);
    let dz = d_zero(&m);
    c.approx("entropy dimension -beta'(1)", dz.value, 1.3951, 0.002);
    c.is_true("entropy dimension refinement unflagged", !dz.flagged);
    Ok(())
}

/// Uniform target at negative orders: fitted decay exponent is the space
/// dimension and n*e matches the closed-form coefficient.
fn c03_uniform_negative(c: &mut Checks) -> Result<(), QdimError> {
    let t = Target::raw_density(&Uniform);
    let sizes: Vec<usize> = (2..=64).collect();
    let opts = OptimizeOpts {
        strategy: Strategy::Dp1d,
        ..OptimizeOpts::default()
    };
    for &r in &[-0.9, -0.5] {
        let curve = error_curve(&t, r, &sizes, None, &opts)?;
        c.approx(&format!("fitted decay exponent at r={r}"), curve.d_hat, 1.0, 0.03);
        let coeff = (2f64.powf(-r) / (1.0 + r)).powf(1.0 / r);
        let mut worst = 0.0f64;
        for p in curve.points.iter().filter(|p| p.n >= 8) {
            worst = worst.max((p.n as f64 * p.error - coeff).abs() / coeff);
        }
        c.push(
            worst <= 0.02,
            format!("n*e vs coefficient {coeff:.6} at r={r}: worst rel dev {worst:.5} <= 0.02 for n >= 8"),
        );
    }
    Ok(())
}

/// Geometric-mean (order zero) error on the uniform target follows
/// n*e = exp(-1)/2 at every size.
fn c04_geometric_mean(c: &mut Checks) -> Result<(), QdimError> {
    let t = Target::raw_density(&Uniform);
    let sizes: Vec<usize> = (2..=64).collect();
    let opts = OptimizeOpts {
        strategy: Strategy::Dp1d,
        ..OptimizeOpts::default()
    };
    let curve = error_curve(&t, 0.0, &sizes, None, &opts)?;
    let coeff = (-1.0f64).exp() / 2.0;
    let mut worst = 0.0f64;
    let mut worst_n = 0usize;
    for p in &curve.points {
        let dev = (p.n as f64 * p.error - coeff).abs() / coeff;
        if dev > worst {
            worst = dev;
            worst_n = p.n;
        }
    }
    c.push(
        worst <= 0.02,
        format!("n*e vs {coeff:.6}: worst rel dev {worst:.5} (n={worst_n}) <= 0.02"),
    );
    Ok(())
}

/// Coefficient ratio between the linear density 2x and the uniform target
/// reproduces the density functional at orders -1/2 and 0.
fn c05_coefficient_ratio(c: &mut Checks) -> Result<(), QdimError> {
    let reg = example_density("linear2x")?;
    let t_nu = Target::density(&reg);
    let t_lambda = Target::raw_density(&Uniform);
    let sizes: Vec<usize> = (2..=64).collect();
    let opts = OptimizeOpts {
        strategy: Strategy::Dp1d,
        ..OptimizeOpts::default()
    };
    for &(r, phi) in &[(-0.5, 0.75), (0.0, 0.5f64.exp() / 2.0)] {
        let cn = error_curve(&t_nu, r, &sizes, Some(1.0), &opts)?;
        let cl = error_curve(&t_lambda, r, &sizes, Some(1.0), &opts)?;
        let ratio = cn.c_hat / cl.c_hat;
        let ok = (ratio - phi).abs() <= 0.05 * phi;
        c.push(
            ok,
            format!("c_hat ratio at r={r}: {ratio:.5} within 5% of {phi:.5}"),
        );
    }
    Ok(())
}

/// Divergent regimes surface as zero-error flags, never as errors, and a
/// healthy configuration stays unflagged.
fn c06_divergence(c: &mut Checks, mode: ExecMode) -> Result<(), QdimError> {
    let opts = OptimizeOpts {
        mode,
        ..OptimizeOpts::default()
    };
    let atoms = build_measure(
        &MeasureSpec {
            d: 1,
            kind: MeasureKind::Atomic {
                points: vec![vec![0.2], vec![0.5], vec![0.9]],
                weights: vec![0.25, 0.5, 0.25],
            },
        },
        4,
        1e-12,
    )?;
    let t_atoms = Target::measure(&atoms, Norm::Max);
    for &r in &[-0.3, -1.0, -2.5] {
        let q = optimize_codebook(&t_atoms, 2, r, &opts)?;
        c.is_true(
            &format!("atomic target diverges at r={r} (e=0)"),
            q.diverged && q.error == 0.0,
        );
    }
    let t_u = Target::raw_density(&Uniform);
    let q = optimize_codebook(&t_u, 4, -1.0, &opts)?;
    c.is_true(
        "uniform target diverges at r=-1 (e=0)",
        q.diverged && q.error == 0.0,
    );
    let reg = example_density("ex29")?;
    let t29 = Target::density(&reg);
    let q = optimize_codebook(&t29, 4, -0.6, &opts)?;
    c.is_true(
        "ex29 diverges at r=-0.6 below its scaling threshold (e=0)",
        q.diverged && q.error == 0.0,
    );
    let dp = OptimizeOpts {
        strategy: Strategy::Dp1d,
        ..OptimizeOpts::default()
    };
    let q = optimize_codebook(&t_u, 4, -0.5, &dp)?;
    c.is_true(
        "uniform target at r=-0.5 stays finite and unflagged",
        !q.diverged && q.error > 0.0,
    );
    Ok(())
}

/// Worst-case local scaling exponents from stored trees. The sponge value
/// is pinned to its closed form log2(1/0.66) = 0.599462 (0.5995 to four
/// places); the estimator reproduces it to machine precision because one
/// branch dominates every level.
fn c07_dim_infty(c: &mut Checks) -> Result<(), QdimError> {
    let e29 = dim_infty_estimate(&build_measure(&density_spec("ex29"), 16, 1e-12)?)?;
    c.approx("ex29 local scaling at depth 16", e29.value, 0.5, 0.05);
    c.note(format!(
        "ex29 deep-half slope {:.6}, last-level ratio {:.6}: the logarithmic damping decays like log2(n)/n, far slower than depth 16 resolves",
        e29.value, e29.last_level_ratio
    ));
    let e28 = dim_infty_estimate(&build_measure(&density_spec("ex28"), 16, 1e-12)?)?;
    c.approx("ex28 local scaling at depth 16", e28.value, 0.5, 0.1);
    let em = dim_infty_estimate(&build_measure(&menger_spec(), 12, 1e-12)?)?;
    let exact = (1.0f64 / 0.66).log2();
    c.approx("sponge local scaling at depth 12", em.value, exact, 1e-6);
    Ok(())
}

/// Three independent partition statistics of the sponge cascade at
/// r=-0.5 recover the same exponent: the stopping-count growth rate, the
/// greedy envelope decay rate, and the optimized coarse upper dimension.
fn c08_partition_chain(c: &mut Checks) -> Result<(), QdimError> {
    let env = CascadeEnvelope::new(&MENGER_PROBS, -0.5)?;
    let q_ref = 1.870;

    let xs: Vec<f64> = (1..=7).map(|k| 10f64.powi(k)).collect();
    let m_pts: Vec<(f64, f64)> = xs
        .iter()
        .map(|&x| (x.ln(), (env.stopping_count(x) as f64).ln()))
        .collect();
    let m_slope = lsq(&m_pts).0;
    c.approx("stopping-count growth exponent over 6 decades", m_slope, q_ref, 0.1);

    let g_pts: Vec<(f64, f64)> = xs
        .iter()
        .map(|&n| (n.ln(), env.greedy_gamma(n as u64).ln()))
        .collect();
    let g_slope = lsq(&g_pts).0;
    c.approx("greedy envelope decay, -1/slope", -1.0 / g_slope, q_ref, 0.1);

    let levels: Vec<u32> = (120..=240).step_by(8).collect();
    let table = env.coarse_table(&levels);
    let alphas: Vec<f64> = (20..=200).map(|k| k as f64 * 0.01).collect();
    let opt = table.optimized(&alphas);
    c.approx("optimized coarse upper dimension", opt.f_upper, q_ref, 0.1);
    c.note(format!(
        "coarse optimum at alpha = {:.2} over levels 120..=240 step 8",
        opt.best_alpha
    ));
    Ok(())
}

/// On small trees the greedy splitter attains the exhaustive-search
/// optimum for every budget.
fn c09_greedy_exhaustive(c: &mut Checks) -> Result<(), QdimError> {
    let mut rng = ChaCha20Rng::seed_from_u64(0x51ee_d009);
    let mut worst = 0.0f64;
    let mut all_ok = true;
    for trial in 0..25 {
        let p: f64 = rng.gen_range(0.15..0.85);
        let depth: u32 = rng.gen_range(3..=6);
        let r: f64 = -rng.gen_range(0.1..0.9);
        let m = build_measure(&binary_cascade_spec(p), depth, 1e-12)?;
        let mut trial_worst = 0.0f64;
        for budget in 1..=12usize {
            let g = greedy_partition(&m, r, budget)?.max_j;
            let x = exhaustive_gamma(&m, r, budget)?;
            let dev = (g - x).abs() / x.abs().max(1e-300);
            trial_worst = trial_worst.max(dev);
        }
        if trial_worst > 1e-12 {
            all_ok = false;
            c.push(
                false,
                format!(
                    "trial {trial}: p={p:.4} depth={depth} r={r:.4} worst rel dev {trial_worst:.3e}"
                ),
            );
        }
        worst = worst.max(trial_worst);
    }
    c.push(
        all_ok,
        format!("greedy equals exhaustive on 25 random cascades x 12 budgets (worst rel dev {worst:.2e})"),
    );
    Ok(())
}

/// Moment bound for uniform targets, order monotonicity of errors, and
/// the mixture sandwich, each with its stated slack.
fn c10_inequalities(c: &mut Checks) -> Result<(), QdimError> {
    let mut rng = ChaCha20Rng::seed_from_u64(0xb0c4_2026);
    let mut holds = 0usize;
    for _ in 0..100 {
        let m: usize = rng.gen_range(1..=256);
        let a: Vec<f64> = (0..m).map(|_| 1.0 - rng.gen::<f64>()).collect();
        let chk = lebesgue_bound_check(&a, -0.5)?;
        if chk.holds {
            holds += 1;
        }
    }
    c.push(
        holds == 100,
        format!("uniform moment bound holds for {holds}/100 random codebooks (m <= 256, r=-0.5)"),
    );

    let reg2x = example_density("linear2x")?;
    let t2x = Target::density(&reg2x);
    let tu = Target::raw_density(&Uniform);
    let opts = OptimizeOpts {
        strategy: Strategy::Dp1d,
        ..OptimizeOpts::default()
    };
    for (name, t) in [("uniform", &tu), ("linear2x", &t2x)] {
        for &n in &[4usize, 16] {
            let e = |r: f64| -> Result<f64, QdimError> {
                Ok(optimize_codebook(t, n, r, &opts)?.error)
            };
            let (es, er, e0) = (e(-0.8)?, e(-0.3)?, e(0.0)?);
            c.push(
                es <= er * 1.01 && er <= e0 * 1.01,
                format!(
                    "order monotonicity on {name}, n={n}: e(-0.8)={es:.6} <= e(-0.3)={er:.6} <= e(0)={e0:.6} (1% slack)"
                ),
            );
        }
    }

    let left = PiecewiseConst::new("left-half", vec![(0.0, 0.5, 1.0)]);
    let right = PiecewiseConst::new("right-half", vec![(0.5, 1.0, 1.0)]);
    let parts: Vec<(f64, &dyn Density1d)> = vec![(0.5, &left), (0.5, &right)];
    let rep = mixture_bounds_check(&parts, 8, &[4, 4], -0.5, 0.02, &opts)?;
    c.is_true(
        &format!(
            "mixture sandwich at n=8, parts (4,4): lower {:.4} <= V {:.4} <= upper {:.4} (2% slack)",
            rep.lower, rep.v_mix, rep.upper
        ),
        rep.upper_holds && rep.lower_holds,
    );
    Ok(())
}

/// Positive-order cross-check: the quantizer-fitted decay exponent on the
/// sponge cascade agrees with the spectral identity r q_r/(1-q_r).
/// Codebooks are optimized against a depth-8 tree with warm chaining and
/// each one is evaluated on the depth-12 tree; the fit uses the deep half
/// of the size ladder.
fn c11_positive_order(c: &mut Checks, mode: ExecMode) -> Result<(), QdimError> {
    let spec = menger_spec();
    let m8 = build_measure(&spec, 8, 1e-12)?;
    let m10 = build_measure(&spec, 10, 1e-12)?;
    let m12 = build_measure(&spec, 12, 1e-12)?;
    let d_target = critical_q(&m10, 1.0, "")?.d_r;
    let t8 = Target::measure(&m8, Norm::Max);
    let t12 = Target::measure(&m12, Norm::Max);
    let sizes = [4usize, 8, 16, 32, 64, 128, 256];
    let mut opts = OptimizeOpts {
        strategy: Strategy::Lloyd,
        seed: 20240817,
        starts: 2,
        max_iters: 60,
        mode,
        ..OptimizeOpts::default()
    };
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for &n in &sizes {
        let q = optimize_codebook(&t8, n, 1.0, &opts)?;
        let eval = distortion(&t12, &q.codebook, 1.0, mode)?;
        c.note(format!(
            "n={n}: optimized error {:.6} on depth 8, evaluated {:.6} on depth 12 (bound {:.1e})",
            q.error, eval.error, eval.bound
        ));
        pts.push((-(eval.error.ln()), (n as f64).ln()));
        opts.warm = Some(q.codebook);
    }
    let d_hat = lsq(deep_half(&pts)).0;
    c.approx("fitted decay exponent at r=+1", d_hat, d_target, 0.1);
    Ok(())
}

/// Norm classification of the comb density: finite below the critical
/// exponent s_h = 4/3, divergent above, and the interval chain
/// -1 < -dim_infty < d/s_h - d built from computed and declared values.
fn c12_norm_classification(c: &mut Checks) -> Result<(), QdimError> {
    let reg = example_density("ex28")?;
    c.is_true(
        "ex28 s-norm finite at s=1.3",
        reg.snorm(1.3).is_finite(),
    );
    c.is_true(
        "ex28 s-norm divergent at s=1.4",
        !reg.snorm(1.4).is_finite(),
    );
    c.approx("declared norm threshold s_h", reg.s_h, 4.0 / 3.0, 1e-12);
    let est = dim_infty_estimate(&build_measure(&density_spec("ex28"), 16, 1e-12)?)?;
    c.approx("ex28 local scaling at depth 16", est.value, 0.5, 0.1);
    let upper = 1.0 / reg.s_h - 1.0;
    c.is_true(
        &format!(
            "interval chain -1 < {:.4} < {:.4} from computed scaling and declared s_h",
            -est.value, upper
        ),
        -1.0 < -est.value && -est.value < upper,
    );
    Ok(())
}

/// Bisects log2(sum p^q) = q r for the exact critical exponent of a
/// binary cascade; bracket from the sign structure of the two regimes.
fn exact_binary_root(p: f64, r: f64) -> Option<f64> {
    let g = |q: f64| cascade_beta(&[p, 1.0 - p], q).expect("valid weights") - q * r;
    let (mut lo, mut hi);
    if r > 0.0 {
        lo = 1e-9;
        hi = 1.0;
        if g(lo) <= 0.0 || g(hi) >= 0.0 {
            return None;
        }
    } else {
        lo = 1.0;
        hi = 2.0;
        let mut guard = 0;
        while g(hi) > 0.0 {
            hi *= 2.0;
            guard += 1;
            if guard > 200 {
                return None;
            }
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Randomized bracket sweep: on binary cascades the measured critical
/// exponent must match the closed-form root and sit inside the a priori
/// bracket, for negative orders above the scaling threshold and for
/// positive orders alike.
fn cx_bracket_bounds(c: &mut Checks) -> Result<(), QdimError> {
    let mut rng = ChaCha20Rng::seed_from_u64(0xb0a4_a2e1);
    let mut worst_root_dev = 0.0f64;
    let mut inside = 0usize;
    let mut matched = 0usize;
    let total = 50usize;
    for trial in 0..total {
        let p: f64 = rng.gen_range(0.15..0.85);
        let dim_infty = -(p.max(1.0 - p)).log2();
        let r: f64 = if trial % 2 == 0 {
            -rng.gen_range(0.05..0.9) * dim_infty
        } else {
            rng.gen_range(0.2..2.0)
        };
        let m = build_measure(&binary_cascade_spec(p), 10, 1e-12)?;
        let cq = critical_q(&m, r, "")?;
        let in_bracket = cq.bracket.0 - 1e-9 <= cq.q_r && cq.q_r <= cq.bracket.1 + 1e-9;
        if in_bracket {
            inside += 1;
        }
        match exact_binary_root(p, r) {
            Some(root) => {
                let dev = (cq.q_r - root).abs();
                worst_root_dev = worst_root_dev.max(dev);
                if dev <= 1e-4 {
                    matched += 1;
                } else {
                    c.push(
                        false,
                        format!(
                            "trial {trial}: p={p:.4} r={r:.4} measured q_r {:.6} vs closed-form {root:.6}",
                            cq.q_r
                        ),
                    );
                }
            }
            None => c.push(false, format!("trial {trial}: closed-form root not bracketed")),
        }
    }
    c.push(
        inside == total,
        format!("measured q_r inside its a priori bracket in {inside}/{total} trials"),
    );
    c.push(
        matched == total,
        format!("measured q_r matches the closed-form root in {matched}/{total} trials (worst dev {worst_root_dev:.2e})"),
    );
    Ok(())
}
