//! One-dimensional density targets: a small registry of analytically known
//! densities on (0,1], with exact interval masses, s-norm classification,
//! and the Phi_r density functional.
//!
//! Registered names:
//! - `uniform`: h = 1.
//! - `linear2x`: h = 2x.
//! - `ex28`: a comb of uniform slabs at geometrically shrinking scales with
//!   critical integrability exponent s_h = 4/3; the infinite family is
//!   truncated at scale 8 and the remaining mass sits on a tail slab.
//! - `ex29`: h(x) = x^(-1/2) (ln(x/10))^(-2), an inverse-square-root density
//!   with logarithmic damping; s_h = 2 with finite norm at the exponent.

use crate::quad::{integrate, integrate_singular, Singular};
use crate::types::QdimError;

/// A density on the half-open unit interval, queryable pointwise and by
/// exact-or-quadrature interval masses.
///
/// `interval_mass` integrates over `(a, b]`; implementations are exact where
/// closed forms exist. `kernel_integral` computes `int |x-y|^r h(x) dx` over
/// `(lo, hi]` (the `r = 0` branch integrates `ln|x-y| h(x)`), returning
/// `+inf` when the integral diverges.
pub trait Density1d: Sync {
    fn name(&self) -> &str;
    fn eval(&self, x: f64) -> f64;
    fn interval_mass(&self, a: f64, b: f64) -> f64;
    fn singular_points(&self) -> &[f64] {
        &[]
    }
    fn total_mass(&self) -> f64 {
        self.interval_mass(0.0, 1.0)
    }
    fn kernel_integral(&self, y: f64, lo: f64, hi: f64, r: f64) -> f64;
}

/// `int |u|^r du` antiderivative: sign(u) |u|^(r+1) / (r+1), valid for r > -1.
fn pow_antideriv(u: f64, r: f64) -> f64 {
    u.signum() * u.abs().powf(r + 1.0) / (r + 1.0)
}

/// `int ln|u| du` antiderivative: u ln|u| - u, continuous at 0.
fn log_antideriv(u: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u * u.abs().ln() - u
    }
}

/// Exact `int_(lo,hi] c |x-y|^r dx` for constant density c (r > -1 or r = 0).
fn const_kernel(c: f64, y: f64, lo: f64, hi: f64, r: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    if r == 0.0 {
        c * (log_antideriv(hi - y) - log_antideriv(lo - y))
    } else {
        c * (pow_antideriv(hi - y, r) - pow_antideriv(lo - y, r))
    }
}

/// Quadrature fallback for kernel integrals: splits at the codebook point
/// and at the density's singular points, then integrates each segment that
/// touches the codebook point in distance coordinates u = |x - y|, so the
/// kernel singularity sits at exactly u = 0 and dyadic grading never runs
/// into the f64 resolution floor around a nonzero y.
pub fn kernel_quadrature(h: &dyn Density1d, y: f64, lo: f64, hi: f64, r: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let mut cuts: Vec<f64> = vec![lo, hi];
    if y > lo && y < hi {
        cuts.push(y);
    }
    for &s in h.singular_points() {
        if s > lo && s < hi {
            cuts.push(s);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let q = kernel_segment(h, y, w[0], w[1], r);
        if q.diverged {
            return f64::INFINITY;
        }
        total += q.value;
    }
    total
}

fn kernel_segment(
    h: &dyn Density1d,
    y: f64,
    a: f64,
    b: f64,
    r: f64,
) -> crate::quad::QuadResult {
    let kern = move |d: f64| {
        if r == 0.0 {
            d.ln()
        } else {
            d.powf(r)
        }
    };
    // |x-y|^r for r < 0 and ln|x-y| are singular at y; density singular
    // points are singular at any order. Cut construction puts all of them
    // at segment endpoints.
    let kernel_sing = r <= 0.0;
    let sing_lo = (kernel_sing && a == y) || h.singular_points().contains(&a);
    let sing_hi = (kernel_sing && b == y) || h.singular_points().contains(&b);
    let tol = 1e-11;
    match (sing_lo, sing_hi) {
        (true, true) => {
            let m = 0.5 * (a + b);
            let left = kernel_segment(h, y, a, m, r);
            if left.diverged {
                return left;
            }
            let right = kernel_segment(h, y, m, b, r);
            crate::quad::QuadResult {
                value: left.value + right.value,
                abs_err: left.abs_err + right.abs_err,
                evals: left.evals + right.evals,
                diverged: right.diverged,
                rounds: left.rounds.max(right.rounds),
            }
        }
        (false, false) => integrate(|x| kern((x - y).abs()) * h.eval(x), a, b, tol),
        (true, false) if kernel_sing && a == y => {
            // Distance coordinates from y upward; a coinciding density
            // singularity (y = 0) compounds at u = 0 and is still graded.
            integrate_singular(
                |u| kern(u) * h.eval(y + u),
                0.0,
                b - a,
                Singular::AtLo,
                tol,
                1400,
            )
        }
        (false, true) if kernel_sing && b == y => integrate_singular(
            |u| kern(u) * h.eval(y - u),
            0.0,
            b - a,
            Singular::AtLo,
            tol,
            1400,
        ),
        (true, false) => integrate_singular(
            |x| kern((x - y).abs()) * h.eval(x),
            a,
            b,
            Singular::AtLo,
            tol,
            1400,
        ),
        (false, true) => integrate_singular(
            |x| kern((x - y).abs()) * h.eval(x),
            a,
            b,
            Singular::AtHi,
            tol,
            1400,
        ),
    }
}

/// Piecewise-constant density: disjoint half-open pieces `(lo, hi]` with
/// constant values; exact masses and kernel integrals.
#[derive(Debug, Clone)]
pub struct PiecewiseConst {
    /// (lo, hi, value), sorted by lo, pairwise disjoint.
    pieces: Vec<(f64, f64, f64)>,
    /// cumulative mass up to each piece start.
    prefix: Vec<f64>,
    name: String,
}

impl PiecewiseConst {
    pub fn new(name: impl Into<String>, mut pieces: Vec<(f64, f64, f64)>) -> Self {
        pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
        pieces.retain(|p| p.1 > p.0);
        let mut prefix = Vec::with_capacity(pieces.len() + 1);
        let mut acc = 0.0;
        for p in &pieces {
            prefix.push(acc);
            acc += (p.1 - p.0) * p.2;
        }
        prefix.push(acc);
        PiecewiseConst {
            pieces,
            prefix,
            name: name.into(),
        }
    }

    pub fn pieces(&self) -> &[(f64, f64, f64)] {
        &self.pieces
    }

    /// Cumulative mass of (0, x].
    fn cumulative(&self, x: f64) -> f64 {
        // Index of the first piece with lo >= x; everything before
        // contributes fully or partially.
        let idx = self.pieces.partition_point(|p| p.0 < x);
        if idx == 0 {
            return 0.0;
        }
        let p = self.pieces[idx - 1];
        self.prefix[idx - 1] + (x.min(p.1) - p.0).max(0.0) * p.2
    }
}

impl Density1d for PiecewiseConst {
    fn name(&self) -> &str {
        &self.name
    }

    fn eval(&self, x: f64) -> f64 {
        let idx = self.pieces.partition_point(|p| p.0 < x);
        if idx == 0 {
            return 0.0;
        }
        let p = self.pieces[idx - 1];
        if x > p.0 && x <= p.1 {
            p.2
        } else {
            0.0
        }
    }

    fn interval_mass(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        self.cumulative(b) - self.cumulative(a)
    }

    fn kernel_integral(&self, y: f64, lo: f64, hi: f64, r: f64) -> f64 {
        let mut total = 0.0;
        for &(plo, phi, c) in &self.pieces {
            let a = plo.max(lo);
            let b = phi.min(hi);
            if b <= a {
                continue;
            }
            // A positive slab touching y makes int |x-y|^r dx diverge at r <= -1.
            if r <= -1.0 && y >= a && y <= b {
                return f64::INFINITY;
            }
            total += const_kernel(c, y, a, b, r);
        }
        total
    }
}

/// Outcome of an s-norm computation: the integral `int h^s dLambda`
/// together with its convergence classification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnormOutcome {
    Finite(f64),
    Divergent,
}

impl SnormOutcome {
    pub fn is_finite(&self) -> bool {
        matches!(self, SnormOutcome::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            SnormOutcome::Finite(v) => Some(*v),
            SnormOutcome::Divergent => None,
        }
    }
}

const LN10: f64 = core::f64::consts::LN_10;

/// h(x) = x^(-1/2) (ln(x/10))^(-2); all integrals go through the
/// substitution x = 10 e^(-u), under which
/// `int_(a,b] h^s dx = 10^(1-s/2) int_{u(b)}^{u(a)} e^{-(1-s/2)u} u^{-2s} du`
/// with u(x) = ln(10/x), turning the singularity at 0 into exponential decay.
#[derive(Debug, Clone, Copy)]
pub struct LogDamped;

impl LogDamped {
    fn u_of(x: f64) -> f64 {
        (10.0 / x).ln()
    }

    /// `int_{u_lo}^{u_hi or infinity} e^{-cu} u^{-p} du` by unit panels,
    /// stopping when the exponential tail is negligible. Requires c > 0.
    fn decaying_integral(c: f64, p: f64, u_lo: f64, u_hi: f64) -> f64 {
        debug_assert!(c > 0.0);
        let mut total = 0.0f64;
        let mut a = u_lo;
        let width = (2.0 / c).min(8.0).max(0.5);
        loop {
            let b = (a + width).min(u_hi);
            let q = integrate(|u| (-c * u).exp() * u.powf(-p), a, b, 1e-16 * (1.0 + total));
            total += q.value;
            if b >= u_hi {
                break;
            }
            // Remaining tail is below e^{-c b} b^{-p} / c; stop when negligible.
            if (-c * b).exp() * b.powf(-p) / c < 1e-17 * total.max(1e-300) {
                break;
            }
            a = b;
        }
        total
    }

    /// `int h^s` over (0,1]; exact classification by the exponent 1 - s/2.
    pub fn snorm_integral(s: f64) -> SnormOutcome {
        let c = 1.0 - 0.5 * s;
        if c < 0.0 {
            return SnormOutcome::Divergent;
        }
        if c == 0.0 {
            // int_{ln 10}^inf u^{-2s} du with 2s = 4.
            return SnormOutcome::Finite(LN10.powi(-3) / 3.0);
        }
        let v = 10f64.powf(c) * Self::decaying_integral(c, 2.0 * s, LN10, f64::INFINITY);
        SnormOutcome::Finite(v)
    }

    /// `int h ln h` over (0,1] (for the entropy functional).
    pub fn entropy_integral() -> f64 {
        // ln h = (u - ln 10)/2 - 2 ln u under x = 10 e^{-u}.
        let mut total = 0.0f64;
        let mut a = LN10;
        loop {
            let b = a + 4.0;
            let q = integrate(
                |u: f64| {
                    10f64.sqrt() * (-0.5 * u).exp() * u.powi(-2) * (0.5 * (u - LN10) - 2.0 * u.ln())
                },
                a,
                b,
                1e-15,
            );
            total += q.value;
            if (-0.5 * b).exp() * b < 1e-18 {
                break;
            }
            a = b;
        }
        total
    }
}

impl Density1d for LogDamped {
    fn name(&self) -> &str {
        "ex29"
    }

    fn eval(&self, x: f64) -> f64 {
        let l = (x / 10.0).ln();
        x.powf(-0.5) / (l * l)
    }

    fn interval_mass(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let u_hi = if a <= 0.0 {
            f64::INFINITY
        } else {
            Self::u_of(a)
        };
        let u_lo = Self::u_of(b);
        10f64.sqrt() * Self::decaying_integral(0.5, 2.0, u_lo, u_hi)
    }

    fn singular_points(&self) -> &[f64] {
        &[0.0]
    }

    fn kernel_integral(&self, y: f64, lo: f64, hi: f64, r: f64) -> f64 {
        // The density behaves like x^(-1/2) near 0: with a codebook point at
        // the origin the kernel exponent becomes r - 1/2, divergent for
        // r <= -1/2 (up to the log damping, which rescues exactly r = -1/2).
        kernel_quadrature(self, y, lo, hi, r)
    }
}

/// Uniform density h = 1.
#[derive(Debug, Clone, Copy)]
pub struct Uniform;

impl Density1d for Uniform {
    fn name(&self) -> &str {
        "uniform"
    }

    fn eval(&self, x: f64) -> f64 {
        if x > 0.0 && x <= 1.0 {
            1.0
        } else {
            0.0
        }
    }

    fn interval_mass(&self, a: f64, b: f64) -> f64 {
        (b.min(1.0) - a.max(0.0)).max(0.0)
    }

    fn kernel_integral(&self, y: f64, lo: f64, hi: f64, r: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        if r <= -1.0 && y >= lo && y <= hi {
            return f64::INFINITY;
        }
        const_kernel(1.0, y, lo, hi, r)
    }
}

/// Linear density h = 2x.
#[derive(Debug, Clone, Copy)]
pub struct Linear2x;

impl Density1d for Linear2x {
    fn name(&self) -> &str {
        "linear2x"
    }

    fn eval(&self, x: f64) -> f64 {
        if x > 0.0 && x <= 1.0 {
            2.0 * x
        } else {
            0.0
        }
    }

    fn interval_mass(&self, a: f64, b: f64) -> f64 {
        let a = a.max(0.0);
        let b = b.min(1.0);
        if b <= a {
            return 0.0;
        }
        b * b - a * a
    }

    fn kernel_integral(&self, y: f64, lo: f64, hi: f64, r: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        if r <= -1.0 && y >= lo && y <= hi && hi > 0.0 {
            return f64::INFINITY;
        }
        // int 2x |x-y|^r dx = 2 int (u+y)|u|^r du with u = x - y.
        let term = |u: f64| -> f64 {
            if r == 0.0 {
                // int 2x ln|x-y| dx = (x^2 - y^2) ln|x-y| - x^2/2 - xy, x = u + y.
                let x = u + y;
                let lg = if u == 0.0 { 0.0 } else { u.abs().ln() };
                (x * x - y * y) * lg - 0.5 * x * x - x * y
            } else {
                2.0 * (u.abs().powf(r + 2.0) / (r + 2.0) + y * pow_antideriv(u, r))
            }
        };
        term(hi - y) - term(lo - y)
    }
}

/// Builds the truncated comb density: scale-n blocks (n = 1..=8) of 2^n
/// uniform slabs, each slab one dyadic interval of length 2^(1-3n) carrying
/// value 2^((3n-1)/2); blocks 1 and 2 are packed tight from 0, blocks 3..8
/// sit at the left edges of dyadic slots of pitch 4^(-n), and the mass of
/// the truncated scales (relative deficit exactly 2^(-4)) is spread
/// uniformly over the tail slab (1 - 2^(-6), 1].
///
/// Every slab is exactly one dyadic cube, so cube masses at any level come
/// from the exact cumulative function with no quadrature.
fn comb_pieces() -> Vec<(f64, f64, f64)> {
    let mut pieces = Vec::new();
    for n in 1u32..=8 {
        let len = 0.5f64.powi(3 * n as i32 - 1);
        let value = 2f64.powf((3.0 * n as f64 - 1.0) / 2.0);
        let (start, pitch) = match n {
            1 => (0.0, len),
            2 => (0.5, len),
            _ => (0.875 - 0.5f64.powi(n as i32 - 1), 0.25f64.powi(n as i32)),
        };
        for j in 0..(1u64 << n) {
            let lo = start + j as f64 * pitch;
            pieces.push((lo, lo + len, value));
        }
    }
    // Ideal total mass T = sum_{n>=1} 2^{-(n-1)/2} = 1/(1 - 2^{-1/2});
    // truncated scales n > 8 hold T * 2^{-4}.
    let t = 1.0 / (1.0 - 0.5f64.sqrt());
    let tail_lo = 1.0 - 0.5f64.powi(6);
    pieces.push((tail_lo, 1.0, t * 0.0625 / (1.0 - tail_lo)));
    pieces
}

/// The four registered density forms.
pub enum DensityForm {
    Uniform(Uniform),
    Linear2x(Linear2x),
    Comb(PiecewiseConst),
    LogDamped(LogDamped),
}

impl DensityForm {
    fn as_dyn(&self) -> &dyn Density1d {
        match self {
            DensityForm::Uniform(d) => d,
            DensityForm::Linear2x(d) => d,
            DensityForm::Comb(d) => d,
            DensityForm::LogDamped(d) => d,
        }
    }
}

/// A named density with its declared critical integrability exponent and
/// infinity dimension, used both as an integration target and as ground
/// truth for classification tests.
pub struct RegisteredDensity {
    pub name: &'static str,
    /// sup{s : int h^s < inf}; f64::INFINITY when every norm is finite.
    pub s_h: f64,
    /// Declared worst-case local mass-scaling exponent.
    pub dim_infty: f64,
    /// Present when the registered form truncates an infinite construction.
    pub truncation_note: Option<&'static str>,
    form: DensityForm,
}

impl RegisteredDensity {
    pub fn density(&self) -> &dyn Density1d {
        self.form.as_dyn()
    }

    /// `int h^s dLambda` with exact convergence classification.
    ///
    /// For `ex28` the classification and value refer to the ideal infinite
    /// family (geometric series, ratio 2^(3s/2 - 2)); the stored truncated
    /// realization always has finite norms and is noted in `truncation_note`.
    pub fn snorm(&self, s: f64) -> SnormOutcome {
        match &self.form {
            DensityForm::Uniform(_) => SnormOutcome::Finite(1.0),
            DensityForm::Linear2x(_) => SnormOutcome::Finite(2f64.powf(s) / (s + 1.0)),
            DensityForm::Comb(_) => {
                let rho = 2f64.powf(1.5 * s - 2.0);
                if rho >= 1.0 {
                    SnormOutcome::Divergent
                } else {
                    SnormOutcome::Finite(2f64.powf(1.0 - 0.5 * s) * rho / (1.0 - rho))
                }
            }
            DensityForm::LogDamped(_) => LogDamped::snorm_integral(s),
        }
    }

    /// The density functional: for r in (-d, inf) \ {0} the 1/(1+r)-norm of
    /// the unit-mass rescaling of h raised to 1/r; exp of the negated entropy
    /// integral at r = 0; and 0 at or below r = -1 (d = 1 here), or when the
    /// required norm diverges at negative order.
    pub fn phi_r(&self, r: f64) -> f64 {
        if r <= -1.0 {
            return 0.0;
        }
        let total = self.density().total_mass();
        if r == 0.0 {
            return self.phi_zero();
        }
        let p = 1.0 / (1.0 + r);
        match self.snorm(p) {
            SnormOutcome::Divergent => {
                if r < 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            SnormOutcome::Finite(np_raw) => {
                // int htilde^p = total^{-p} int h^p.
                let np = np_raw * total.powf(-p);
                np.powf((1.0 + r) / r)
            }
        }
    }

    /// `int h ln h` for the registered (unscaled) density.
    fn entropy_integral_raw(&self) -> f64 {
        match &self.form {
            DensityForm::Uniform(_) => 0.0,
            // int 2x ln(2x) dx = ln 2 - 1/2.
            DensityForm::Linear2x(_) => core::f64::consts::LN_2 - 0.5,
            DensityForm::Comb(d) => d
                .pieces()
                .iter()
                .map(|&(lo, hi, v)| (hi - lo) * v * v.ln())
                .sum(),
            DensityForm::LogDamped(_) => LogDamped::entropy_integral(),
        }
    }

    /// exp(-int htilde ln htilde) for the unit-mass rescaling, the r = 0
    /// branch of the density functional.
    pub fn phi_zero(&self) -> f64 {
        let total = self.density().total_mass();
        let ent = self.entropy_integral_raw() / total - total.ln();
        (-ent).exp()
    }
}

/// Looks up a registered density by name.
pub fn example_density(name: &str) -> Result<RegisteredDensity, QdimError> {
    match name {
        "uniform" => Ok(RegisteredDensity {
            name: "uniform",
            s_h: f64::INFINITY,
            dim_infty: 1.0,
            truncation_note: None,
            form: DensityForm::Uniform(Uniform),
        }),
        "linear2x" => Ok(RegisteredDensity {
            name: "linear2x",
            s_h: f64::INFINITY,
            dim_infty: 1.0,
            truncation_note: None,
            form: DensityForm::Linear2x(Linear2x),
        }),
        "ex28" => Ok(RegisteredDensity {
            name: "ex28",
            s_h: 4.0 / 3.0,
            dim_infty: 0.5,
            truncation_note: Some(
                "scales beyond 8 are truncated (relative deficit 2^-4); their mass sits \
                 uniformly on the tail slab (1 - 2^-6, 1]",
            ),
            form: DensityForm::Comb(PiecewiseConst::new("ex28", comb_pieces())),
        }),
        "ex29" => Ok(RegisteredDensity {
            name: "ex29",
            s_h: 2.0,
            dim_infty: 0.5,
            truncation_note: None,
            form: DensityForm::LogDamped(LogDamped),
        }),
        other => Err(QdimError::UnknownDensity(other.to_string())),
    }
}

/// Names of all registered densities.
pub fn registry_names() -> &'static [&'static str] {
    &["uniform", "linear2x", "ex28", "ex29"]
}

/// Convenience: the probability-normalized mass of `(a, b]` under a density.
pub fn normalized_mass(h: &dyn Density1d, a: f64, b: f64) -> f64 {
    h.interval_mass(a, b) / h.total_mass()
}

/// Weighted mixture of densities, each component normalized to probability
/// mass 1 before weighting. Every integral is a weighted sum of component
/// integrals, so exactness of the parts carries over.
pub struct MixtureDensity<'a> {
    parts: Vec<(f64, &'a dyn Density1d)>,
    inv_totals: Vec<f64>,
    singulars: Vec<f64>,
    name: String,
}

impl<'a> MixtureDensity<'a> {
    pub fn new(parts: Vec<(f64, &'a dyn Density1d)>) -> Result<Self, QdimError> {
        if parts.is_empty() {
            return Err(QdimError::InvalidSpec("empty mixture".into()));
        }
        let wsum: f64 = parts.iter().map(|p| p.0).sum();
        if (wsum - 1.0).abs() > 1e-12 || parts.iter().any(|p| p.0 < 0.0) {
            return Err(QdimError::ProbabilitySum { sum: wsum });
        }
        let mut inv_totals = Vec::with_capacity(parts.len());
        for (_, h) in &parts {
            let t = h.total_mass();
            if !(t > 0.0) || !t.is_finite() {
                return Err(QdimError::InvalidSpec(
                    "mixture component with non-finite or zero mass".into(),
                ));
            }
            inv_totals.push(1.0 / t);
        }
        let mut singulars: Vec<f64> = parts
            .iter()
            .flat_map(|(_, h)| h.singular_points().iter().copied())
            .collect();
        singulars.sort_by(f64::total_cmp);
        singulars.dedup();
        let name = format!(
            "mix({})",
            parts
                .iter()
                .map(|(w, h)| format!("{:.3}*{}", w, h.name()))
                .collect::<Vec<_>>()
                .join("+")
        );
        Ok(MixtureDensity {
            parts,
            inv_totals,
            singulars,
            name,
        })
    }
}

impl Density1d for MixtureDensity<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn eval(&self, x: f64) -> f64 {
        self.parts
            .iter()
            .zip(&self.inv_totals)
            .map(|((w, h), &it)| w * it * h.eval(x))
            .sum()
    }

    fn interval_mass(&self, a: f64, b: f64) -> f64 {
        self.parts
            .iter()
            .zip(&self.inv_totals)
            .map(|((w, h), &it)| w * it * h.interval_mass(a, b))
            .sum()
    }

    fn singular_points(&self) -> &[f64] {
        &self.singulars
    }

    fn total_mass(&self) -> f64 {
        1.0
    }

    fn kernel_integral(&self, y: f64, lo: f64, hi: f64, r: f64) -> f64 {
        self.parts
            .iter()
            .zip(&self.inv_totals)
            .map(|((w, h), &it)| w * it * h.kernel_integral(y, lo, hi, r))
            .sum()
    }
}
