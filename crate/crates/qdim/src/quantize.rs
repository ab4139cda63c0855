//! Quantization of real order r against stored measures and 1d densities:
//! exact cell decomposition of the moment integral, grid dynamic
//! programming, Lloyd iteration, and exhaustive search over candidates.
//!
//! Orientation. For r > 0 the optimal codebook minimizes the moment
//! V = int d(x,A)^r dnu and the error is e = V^(1/r). For r < 0 the map
//! t -> t^(1/r) is decreasing, so minimizing e means maximizing V. For
//! r = 0 the cost is the log moment int ln d(x,A) dnu, minimized directly,
//! and e = exp of it. All three cases share one `better` predicate.
//!
//! Divergence is a result, not a failure: when the supremum of V is +inf
//! (order at or below -1 on a 1d density, order below the declared local
//! scaling exponent, or any nonpositive order on an atomic target), the
//! infimum of the error is 0 and the quantizer reports `diverged` with
//! error 0 instead of optimizing.
//!
//! Two distortion paths. Density targets get the exact path: sort the
//! codebook, cut (0,1] at midpoints, and evaluate one kernel integral per
//! cell. Stored dyadic trees get the streaming path: sum cube-center
//! contributions over the deepest level and report an explicit `bound` on
//! the difference from the true integral, derived from the half-diagonal.
//! The streaming path never certifies r <= 0 near a codebook point (the
//! center value may sit arbitrarily far from the cell average), which the
//! bound reports as +inf rather than hiding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::density::Density1d;
use crate::dyadic::{ancestor_key, DyadicMeasure};
use crate::exec::{self, ExecMode};
use crate::numerics::{comp_sum, deep_half, golden_max, golden_min, lsq};
use crate::types::{Norm, QdimError};

/// What a quantizer run optimizes against.
pub enum Target<'a> {
    /// A measure resolved to a dyadic tree (atoms are kept exactly).
    Measure { m: &'a DyadicMeasure, norm: Norm },
    /// A one-dimensional density with an optional declared local scaling
    /// exponent guarding orders below its divergence threshold.
    Density {
        h: &'a dyn Density1d,
        declared_dim_infty: Option<f64>,
    },
}

impl<'a> Target<'a> {
    pub fn measure(m: &'a DyadicMeasure, norm: Norm) -> Self {
        Target::Measure { m, norm }
    }

    pub fn density(reg: &'a crate::density::RegisteredDensity) -> Self {
        Target::Density {
            h: reg.density(),
            declared_dim_infty: Some(reg.dim_infty),
        }
    }

    pub fn raw_density(h: &'a dyn Density1d) -> Self {
        Target::Density {
            h,
            declared_dim_infty: None,
        }
    }

    pub fn dim(&self) -> u32 {
        match self {
            Target::Measure { m, .. } => m.d,
            Target::Density { .. } => 1,
        }
    }
}

/// Value of the moment integral for one fixed codebook.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Distortion {
    /// The r-th moment V (log moment for r = 0), normalized to a
    /// probability target.
    pub v: f64,
    /// e = V^(1/r), exp(V) for r = 0; 0 when the moment diverges.
    pub error: f64,
    pub diverged: bool,
    /// Absolute uncertainty of `v`: quadrature tolerance on the exact
    /// path, half-diagonal envelope on the streaming path (+inf when the
    /// cell radius cannot certify the integrand).
    pub bound: f64,
}

/// Turns a moment value into the reported error and divergence flag.
fn error_from(v: f64, r: f64) -> (f64, bool) {
    if r == 0.0 {
        if v == f64::NEG_INFINITY {
            (0.0, true)
        } else {
            (v.exp(), false)
        }
    } else if !v.is_finite() {
        if r < 0.0 {
            (0.0, true)
        } else {
            (f64::INFINITY, true)
        }
    } else {
        (v.powf(1.0 / r), false)
    }
}

/// `a` is strictly preferable to `b` for order `r`.
fn better(r: f64, a: f64, b: f64) -> bool {
    if r < 0.0 {
        a > b
    } else {
        a < b
    }
}

/// Sentinel no candidate can lose to.
fn worst(r: f64) -> f64 {
    if r < 0.0 {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    }
}

/// Kernel integral with empty intervals short-circuited to zero.
fn ki(h: &dyn Density1d, y: f64, lo: f64, hi: f64, r: f64) -> f64 {
    if hi > lo {
        h.kernel_integral(y, lo, hi, r)
    } else {
        0.0
    }
}

fn scalar_codebook(a: &[Vec<f64>]) -> Result<Vec<f64>, QdimError> {
    let mut pts = Vec::with_capacity(a.len());
    for p in a {
        if p.len() != 1 {
            return Err(QdimError::InvalidSpec(format!(
                "density target expects 1d codebook points, got dimension {}",
                p.len()
            )));
        }
        if !(p[0].is_finite() && (0.0..=1.0).contains(&p[0])) {
            return Err(QdimError::InvalidSpec(format!(
                "codebook point {} outside [0,1]",
                p[0]
            )));
        }
        pts.push(p[0]);
    }
    if pts.is_empty() {
        return Err(QdimError::InvalidSpec("empty codebook".into()));
    }
    Ok(pts)
}

/// Exact moment of a sorted-midpoint cell decomposition on (0,1].
fn density_moment(h: &dyn Density1d, pts_sorted: &[f64], r: f64) -> f64 {
    let mut v = 0.0;
    for (i, &y) in pts_sorted.iter().enumerate() {
        let lo = if i == 0 {
            0.0
        } else {
            0.5 * (pts_sorted[i - 1] + y)
        };
        let hi = if i + 1 == pts_sorted.len() {
            1.0
        } else {
            0.5 * (y + pts_sorted[i + 1])
        };
        v += ki(h, y, lo, hi, r);
    }
    v
}

fn density_distortion(h: &dyn Density1d, a: &[Vec<f64>], r: f64) -> Result<Distortion, QdimError> {
    let mut pts = scalar_codebook(a)?;
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let v = density_moment(h, &pts, r) / h.total_mass();
    let (error, diverged) = error_from(v, r);
    Ok(Distortion {
        v,
        error,
        diverged,
        bound: 1e-10,
    })
}

/// Codebook stored flat (point i occupies `pts[i*d..(i+1)*d]`).
struct FlatCodebook {
    d: usize,
    pts: Vec<f64>,
}

impl FlatCodebook {
    fn from_points(a: &[Vec<f64>], d: usize) -> Result<Self, QdimError> {
        if a.is_empty() {
            return Err(QdimError::InvalidSpec("empty codebook".into()));
        }
        let mut pts = Vec::with_capacity(a.len() * d);
        for p in a {
            if p.len() != d {
                return Err(QdimError::InvalidSpec(format!(
                    "codebook point dimension {} does not match target dimension {d}",
                    p.len()
                )));
            }
            for &x in p {
                if !x.is_finite() {
                    return Err(QdimError::InvalidSpec("non-finite codebook point".into()));
                }
            }
            pts.extend_from_slice(p);
        }
        Ok(FlatCodebook { d, pts })
    }

    fn len(&self) -> usize {
        self.pts.len() / self.d
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.pts[i * self.d..(i + 1) * self.d]
    }

    /// Nearest distance from `x`, restricted to `subset` when given.
    fn nearest(&self, norm: Norm, x: &[f64], subset: Option<&[u32]>) -> f64 {
        let mut best = f64::INFINITY;
        match subset {
            Some(idx) => {
                for &i in idx {
                    let d = norm.dist(x, self.point(i as usize));
                    if d < best {
                        best = d;
                    }
                }
            }
            None => {
                for i in 0..self.len() {
                    let d = norm.dist(x, self.point(i));
                    if d < best {
                        best = d;
                    }
                }
            }
        }
        best
    }
}

/// Half the norm-diameter of a level-`n` cube.
fn half_diag(n: u32, d: u32, norm: Norm) -> f64 {
    let half_side = 0.5 * 2f64.powi(-(n as i32));
    match norm {
        Norm::Euclid => half_side * (d as f64).sqrt(),
        Norm::Max => half_side,
    }
}

/// Per-point contribution to the moment and its half-diagonal bound.
fn center_contribution(w: f64, dmin: f64, rho: f64, r: f64) -> (f64, f64) {
    let value = if r == 0.0 {
        w * dmin.ln()
    } else {
        w * dmin.powf(r)
    };
    let lo = dmin - rho;
    let hi = dmin + rho;
    let bound = if r > 0.0 {
        w * (hi.powf(r) - lo.max(0.0).powf(r))
    } else if lo <= 0.0 {
        f64::INFINITY
    } else if r == 0.0 {
        w * (dmin.ln() - lo.ln()).max(hi.ln() - dmin.ln())
    } else {
        w * (lo.powf(r) - hi.powf(r))
    };
    (value, bound)
}

fn atomic_distortion(
    pts: &[Vec<f64>],
    weights: &[f64],
    norm: Norm,
    cb: &FlatCodebook,
    r: f64,
) -> Distortion {
    let v = comp_sum(pts.iter().zip(weights).map(|(x, &w)| {
        let dmin = cb.nearest(norm, x, None);
        if r == 0.0 {
            w * dmin.ln()
        } else {
            w * dmin.powf(r)
        }
    }));
    let (error, diverged) = error_from(v, r);
    Distortion {
        v,
        error,
        diverged,
        bound: 0.0,
    }
}

/// Codebook sizes times leaf counts beyond this run the two-phase
/// header-shortlist assignment instead of the full scan.
const PRUNE_WORK: usize = 20_000_000;

/// Measure dimensions above this would overflow the stack-local center
/// buffer used by the streaming path.
const MAX_STREAM_DIM: usize = 16;

fn cube_center(key: u64, level: u32, d: u32, stride: u32, out: &mut [f64]) {
    let scale = 2f64.powi(-(level as i32));
    let mask = (1u64 << stride) - 1;
    for (i, slot) in out.iter_mut().enumerate().take(d as usize) {
        let k = (key >> (i as u32 * stride)) & mask;
        *slot = (k as f64 + 0.5) * scale;
    }
}

fn tree_distortion(
    m: &DyadicMeasure,
    norm: Norm,
    cb: &FlatCodebook,
    r: f64,
    mode: ExecMode,
    force_prune: Option<bool>,
) -> Result<Distortion, QdimError> {
    if m.d as usize > MAX_STREAM_DIM {
        return Err(QdimError::Unsupported(format!(
            "streaming distortion supports dimension <= {MAX_STREAM_DIM}, got {}",
            m.d
        )));
    }
    let leaves = m.level(m.max_depth);
    let n_leaves = leaves.keys.len();
    let rho = half_diag(m.max_depth, m.d, norm);
    let stride = m.stride();
    let d = m.d;

    let prune = force_prune
        .unwrap_or(n_leaves.saturating_mul(cb.len()) > PRUNE_WORK)
        && m.max_depth >= 2;
    let header_level = m.max_depth / 2;
    let delta = m.max_depth - header_level;
    let shortlists: Option<Vec<Vec<u32>>> = if prune {
        let headers = m.level(header_level);
        let rho_h = half_diag(header_level, d, norm);
        let mut lists = Vec::with_capacity(headers.keys.len());
        let mut center = [0.0f64; MAX_STREAM_DIM];
        for &hk in &headers.keys {
            let c = &mut center[..d as usize];
            cube_center(hk, header_level, d, stride, c);
            let best = cb.nearest(norm, c, None);
            // A point farther than best + 2*rho_h from the header center
            // cannot be nearest to any point inside the header cube.
            let cut = best + 2.0 * rho_h;
            let keep: Vec<u32> = (0..cb.len())
                .filter(|&i| norm.dist(c, cb.point(i)) <= cut)
                .map(|i| i as u32)
                .collect();
            lists.push(keep);
        }
        Some(lists)
    } else {
        None
    };

    let headers = m.level(header_level);
    let body = |i: usize| -> (f64, f64) {
        let key = leaves.keys[i];
        let w = leaves.mass[i];
        let mut center = [0.0f64; MAX_STREAM_DIM];
        let c = &mut center[..d as usize];
        cube_center(key, m.max_depth, d, stride, c);
        let dmin = match &shortlists {
            Some(lists) => {
                let hk = ancestor_key(key, delta, d, stride);
                let hi = headers.find(hk).expect("leaf cube without stored header");
                cb.nearest(norm, c, Some(&lists[hi]))
            }
            None => cb.nearest(norm, c, None),
        };
        center_contribution(w, dmin, rho, r)
    };
    let (v, bound) = exec::sum_pair_indexed(mode, n_leaves, body);
    let (error, diverged) = error_from(v, r);
    Ok(Distortion {
        v,
        error,
        diverged,
        bound,
    })
}

/// Moment of a fixed codebook against a target.
///
/// Density targets integrate exactly over the midpoint cell decomposition;
/// atomic targets sum exactly over atoms; stored trees stream deepest-level
/// cube centers and report the half-diagonal envelope in `bound`.
pub fn distortion(
    t: &Target,
    codebook: &[Vec<f64>],
    r: f64,
    mode: ExecMode,
) -> Result<Distortion, QdimError> {
    if !r.is_finite() {
        return Err(QdimError::InvalidSpec(format!("order {r} must be finite")));
    }
    match t {
        Target::Density { h, .. } => density_distortion(*h, codebook, r),
        Target::Measure { m, norm } => {
            let cb = FlatCodebook::from_points(codebook, m.d as usize)?;
            match &m.atoms {
                Some((pts, w)) => Ok(atomic_distortion(pts, w, *norm, &cb, r)),
                None => tree_distortion(m, *norm, &cb, r, mode, None),
            }
        }
    }
}

/// Codebook search strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Exact dynamic program over a dyadic candidate grid (1d densities).
    Dp1d,
    /// Alternating nearest-cell / per-cell reoptimization from several
    /// deterministic and seeded starts.
    #[default]
    Lloyd,
    /// Try every size-n subset of an explicit candidate list.
    Exhaustive,
}

/// Tuning for `optimize_codebook`; `Default` suits the registered examples.
#[derive(Debug, Clone)]
pub struct OptimizeOpts {
    pub strategy: Strategy,
    pub seed: u64,
    /// Candidate grid 2^-G for the dynamic program.
    pub grid_g: u32,
    /// Seeded Lloyd restarts on top of the deterministic starts.
    pub starts: usize,
    pub max_iters: usize,
    pub mode: ExecMode,
    /// Previous codebook to warm-start from (nested error curves).
    pub warm: Option<Vec<Vec<f64>>>,
    /// Candidate points for the exhaustive strategy; atomic targets
    /// default to their own atoms.
    pub candidates: Option<Vec<Vec<f64>>>,
}

impl Default for OptimizeOpts {
    fn default() -> Self {
        OptimizeOpts {
            strategy: Strategy::default(),
            seed: 0,
            grid_g: 14,
            starts: 2,
            max_iters: 200,
            mode: ExecMode::default(),
            warm: None,
            candidates: None,
        }
    }
}

/// An optimized codebook with its moment, error, and provenance.
#[derive(Debug, Clone, Serialize)]
pub struct Quantizer {
    pub codebook: Vec<Vec<f64>>,
    pub r: f64,
    pub v: f64,
    pub error: f64,
    pub bound: f64,
    pub diverged: bool,
    pub converged: bool,
    pub method: String,
    pub seed: u64,
}

fn guard_quantizer(codebook: Vec<Vec<f64>>, r: f64, seed: u64, why: &str) -> Quantizer {
    let v = if r == 0.0 {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    };
    Quantizer {
        codebook,
        r,
        v,
        error: 0.0,
        bound: 0.0,
        diverged: true,
        converged: true,
        method: format!("divergence-guard: {why}"),
        seed,
    }
}

fn equispaced(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| vec![(2 * i + 1) as f64 / (2 * n) as f64])
        .collect()
}

/// Divergence decision shared by optimize and error curves: `Some(reason)`
/// when the optimal error is exactly zero because sup V = +inf.
fn divergence_reason(t: &Target, r: f64) -> Option<String> {
    match t {
        Target::Density {
            declared_dim_infty, ..
        } => {
            if r <= -1.0 {
                return Some(format!("order {r} at or below -1 on a 1d density"));
            }
            if let Some(di) = declared_dim_infty {
                if r < 0.0 && r < -di {
                    return Some(format!(
                        "order {r} below the declared scaling threshold -{di}"
                    ));
                }
            }
            None
        }
        Target::Measure { m, .. } => {
            if m.atoms.is_some() && r <= 0.0 {
                return Some(format!("order {r} <= 0 on an atomic target"));
            }
            if let Some(di) = m.declared_dim_infty {
                if r < 0.0 && r < -di {
                    return Some(format!(
                        "order {r} below the declared scaling threshold -{di}"
                    ));
                }
            }
            if r <= -(m.d as f64) && m.atoms.is_none() {
                return Some(format!("order {r} at or below -{}", m.d));
            }
            None
        }
    }
}

fn guard_codebook(t: &Target, n: usize) -> Vec<Vec<f64>> {
    match t {
        Target::Measure { m, .. } => match &m.atoms {
            // Points on atoms realize the divergent supremum directly.
            Some((pts, _)) => (0..n).map(|i| pts[i % pts.len()].clone()).collect(),
            None => (0..n)
                .map(|i| vec![(2 * i + 1) as f64 / (2 * n) as f64; m.d as usize])
                .collect(),
        },
        Target::Density { .. } => equispaced(n),
    }
}

/// Best codebook of size `n` for order `r`.
pub fn optimize_codebook(
    t: &Target,
    n: usize,
    r: f64,
    opts: &OptimizeOpts,
) -> Result<Quantizer, QdimError> {
    if n == 0 {
        return Err(QdimError::InvalidSpec("codebook size must be >= 1".into()));
    }
    if !r.is_finite() {
        return Err(QdimError::InvalidSpec(format!("order {r} must be finite")));
    }
    if let Some(why) = divergence_reason(t, r) {
        return Ok(guard_quantizer(guard_codebook(t, n), r, opts.seed, &why));
    }
    match opts.strategy {
        Strategy::Dp1d => {
            let h = match t {
                Target::Density { h, .. } => *h,
                Target::Measure { .. } => {
                    return Err(QdimError::Unsupported(
                        "the dynamic program needs a 1d density target".into(),
                    ))
                }
            };
            let sweep = dp1d_curve(h, n, r, opts.grid_g, LayerSolver::Auto)?;
            let (v_raw, pts) = sweep
                .into_iter()
                .last()
                .expect("dp sweep returned no layers");
            let v = v_raw / h.total_mass();
            let (error, diverged) = error_from(v, r);
            Ok(Quantizer {
                codebook: pts.into_iter().map(|x| vec![x]).collect(),
                r,
                v,
                error,
                bound: 1e-10,
                diverged,
                converged: true,
                method: format!("dp1d(grid=2^-{})", opts.grid_g),
                seed: opts.seed,
            })
        }
        Strategy::Lloyd => match t {
            Target::Density { h, .. } => lloyd_density(*h, n, r, opts),
            Target::Measure { m, norm } => lloyd_cloud(m, *norm, n, r, opts),
        },
        Strategy::Exhaustive => exhaustive(t, n, r, opts),
    }
}

// ---------------------------------------------------------------------------
// Dynamic program on a dyadic candidate grid.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(not(test), allow(dead_code))]
enum LayerSolver {
    Auto,
    Plain,
    DivideConquer,
}

/// Optimal codebooks of every size up to `k_max`, restricted to the grid
/// j/2^g. Returns the raw (unnormalized) moment and the codebook per size.
///
/// The cost of a sorted codebook splits into a left tail, one term per
/// adjacent pair (the shared cell boundary is their midpoint), and a right
/// tail, so layer k is a matrix row-minimum problem. Rows are solved by
/// divide and conquer assuming the argopt is monotone in the column; the
/// unit tests cross-check that assumption against the plain quadratic
/// solve on coarse grids for every supported order regime.
fn dp1d_curve(
    h: &dyn Density1d,
    k_max: usize,
    r: f64,
    g: u32,
    solver: LayerSolver,
) -> Result<Vec<(f64, Vec<f64>)>, QdimError> {
    if g == 0 || g > 24 {
        return Err(QdimError::InvalidSpec(format!(
            "candidate grid exponent {g} out of range 1..=24"
        )));
    }
    let m_pts = (1usize << g) + 1;
    if k_max > m_pts {
        return Err(QdimError::InvalidSpec(format!(
            "codebook size {k_max} exceeds the {m_pts} grid candidates"
        )));
    }
    let scale = (1u64 << g) as f64;
    let xs: Vec<f64> = (0..m_pts).map(|j| j as f64 / scale).collect();
    let left: Vec<f64> = xs.iter().map(|&x| ki(h, x, 0.0, x, r)).collect();
    let right: Vec<f64> = xs.iter().map(|&x| ki(h, x, x, 1.0, r)).collect();
    let pair = |i: usize, j: usize| -> f64 {
        let mid = 0.5 * (xs[i] + xs[j]);
        ki(h, xs[i], xs[i], mid, r) + ki(h, xs[j], mid, xs[j], r)
    };

    let mut prev = left.clone();
    let mut parents: Vec<Vec<u32>> = Vec::with_capacity(k_max.saturating_sub(1));
    let mut ends: Vec<(f64, usize)> = Vec::with_capacity(k_max);
    let close = |layer: &[f64]| -> (f64, usize) {
        let mut best = worst(r);
        let mut bj = usize::MAX;
        for (j, &fv) in layer.iter().enumerate() {
            let total = fv + right[j];
            if bj == usize::MAX || better(r, total, best) {
                best = total;
                bj = j;
            }
        }
        (best, bj)
    };
    ends.push(close(&prev));
    let use_dc = match solver {
        LayerSolver::Auto => m_pts > 1024,
        LayerSolver::Plain => false,
        LayerSolver::DivideConquer => true,
    };
    for _k in 2..=k_max {
        let mut cur = vec![worst(r); m_pts];
        let mut par = vec![u32::MAX; m_pts];
        if use_dc {
            dc_row_opt(&prev, &mut cur, &mut par, &pair, r, 1, m_pts - 1, 0, m_pts - 2);
        } else {
            for j in 1..m_pts {
                let mut best = worst(r);
                let mut bi = usize::MAX;
                for i in 0..j {
                    let cand = prev[i] + pair(i, j);
                    if bi == usize::MAX || better(r, cand, best) {
                        best = cand;
                        bi = i;
                    }
                }
                cur[j] = best;
                par[j] = bi as u32;
            }
        }
        ends.push(close(&cur));
        parents.push(par);
        prev = cur;
    }

    let mut out = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let (v, end) = ends[k - 1];
        let mut positions = vec![0usize; k];
        positions[k - 1] = end;
        for kk in (2..=k).rev() {
            positions[kk - 2] = parents[kk - 2][positions[kk - 1]] as usize;
        }
        out.push((v, positions.into_iter().map(|j| xs[j]).collect()));
    }
    Ok(out)
}

/// Row optimization by divide and conquer: solve the middle column, then
/// recurse with the argopt splitting the candidate range.
#[allow(clippy::too_many_arguments)]
fn dc_row_opt(
    prev: &[f64],
    cur: &mut [f64],
    par: &mut [u32],
    pair: &dyn Fn(usize, usize) -> f64,
    r: f64,
    jlo: usize,
    jhi: usize,
    ilo: usize,
    ihi: usize,
) {
    if jlo > jhi {
        return;
    }
    let jm = (jlo + jhi) / 2;
    let top = ihi.min(jm.saturating_sub(1));
    let mut best = worst(r);
    let mut bi = usize::MAX;
    if jm >= 1 {
        for i in ilo..=top {
            let cand = prev[i] + pair(i, jm);
            if bi == usize::MAX || better(r, cand, best) {
                best = cand;
                bi = i;
            }
        }
    }
    if bi != usize::MAX {
        cur[jm] = best;
        par[jm] = bi as u32;
    }
    let split = if bi == usize::MAX { top.max(ilo) } else { bi };
    if jm > jlo {
        dc_row_opt(prev, cur, par, pair, r, jlo, jm - 1, ilo, split);
    }
    if jm < jhi {
        dc_row_opt(prev, cur, par, pair, r, jm + 1, jhi, split, ihi);
    }
}

// ---------------------------------------------------------------------------
// Lloyd iteration on a 1d density.

/// Inverse of the cumulative mass, by bisection.
fn quantile(h: &dyn Density1d, u: f64) -> f64 {
    let target = u * h.total_mass();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if h.interval_mass(0.0, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One full Lloyd pass from a fixed start; returns the exact moment of the
/// final codebook and whether the iteration stalled below tolerance.
fn lloyd_density_once(
    h: &dyn Density1d,
    start: &[f64],
    r: f64,
    max_iters: usize,
) -> (f64, Vec<f64>, bool) {
    let mut pts = start.to_vec();
    pts.sort_by(f64::total_cmp);
    let t_mass = h.total_mass();
    let mut v_prev = density_moment(h, &pts, r);
    let mut best_pts = pts.clone();
    let mut v_best = v_prev;
    let mut converged = false;
    for _ in 0..max_iters {
        let n = pts.len();
        // Relocate points whose cell carries no mass into the heaviest cell.
        let masses: Vec<f64> = (0..n)
            .map(|i| {
                let lo = if i == 0 { 0.0 } else { 0.5 * (pts[i - 1] + pts[i]) };
                let hi = if i + 1 == n {
                    1.0
                } else {
                    0.5 * (pts[i] + pts[i + 1])
                };
                h.interval_mass(lo, hi)
            })
            .collect();
        let heaviest = masses
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let mut moved = false;
        for i in 0..n {
            if masses[i] < 1e-12 * t_mass && i != heaviest {
                let lo = if heaviest == 0 {
                    0.0
                } else {
                    0.5 * (pts[heaviest - 1] + pts[heaviest])
                };
                pts[i] = 0.5 * (lo + pts[heaviest]);
                moved = true;
            }
        }
        if moved {
            pts.sort_by(f64::total_cmp);
        }
        // Reoptimize each point inside its fixed cell.
        let old = pts.clone();
        for i in 0..n {
            let lo = if i == 0 { 0.0 } else { 0.5 * (old[i - 1] + old[i]) };
            let hi = if i + 1 == n {
                1.0
            } else {
                0.5 * (old[i] + old[i + 1])
            };
            if hi <= lo {
                continue;
            }
            let cell = |y: f64| ki(h, y, lo, hi, r);
            let (y, _) = if r < 0.0 {
                golden_max(cell, lo, hi, 1e-11)
            } else {
                golden_min(cell, lo, hi, 1e-11)
            };
            pts[i] = y;
        }
        pts.sort_by(f64::total_cmp);
        let v = density_moment(h, &pts, r);
        if better(r, v, v_best) {
            v_best = v;
            best_pts = pts.clone();
        }
        if (v - v_prev).abs() <= 1e-9 * (1.0 + v.abs()) {
            converged = true;
            break;
        }
        v_prev = v;
    }
    (v_best, best_pts, converged)
}

fn lloyd_density(
    h: &dyn Density1d,
    n: usize,
    r: f64,
    opts: &OptimizeOpts,
) -> Result<Quantizer, QdimError> {
    let mut starts: Vec<Vec<f64>> = Vec::new();
    starts.push((0..n).map(|i| (2 * i + 1) as f64 / (2 * n) as f64).collect());
    if let Some(w) = &opts.warm {
        let warm = scalar_codebook(w)?;
        starts.push(adapt_warm(h, &warm, n));
    }
    for s in 0..opts.starts {
        let mut rng = ChaCha20Rng::seed_from_u64(opts.seed.wrapping_add(s as u64));
        let mut qs: Vec<f64> = (0..n).map(|_| quantile(h, rng.gen::<f64>())).collect();
        qs.sort_by(f64::total_cmp);
        starts.push(qs);
    }
    let runs: Vec<(f64, Vec<f64>, bool)> = exec::map_indexed(opts.mode, starts.len(), |i| {
        lloyd_density_once(h, &starts[i], r, opts.max_iters)
    });
    let mut best = 0usize;
    for i in 1..runs.len() {
        if better(r, runs[i].0, runs[best].0) {
            best = i;
        }
    }
    let (v_raw, pts, converged) = runs.into_iter().nth(best).expect("no lloyd runs");
    let v = v_raw / h.total_mass();
    let (error, diverged) = error_from(v, r);
    Ok(Quantizer {
        codebook: pts.into_iter().map(|x| vec![x]).collect(),
        r,
        v,
        error,
        bound: 1e-10,
        diverged,
        converged,
        method: format!("lloyd(starts={})", starts.len()),
        seed: opts.seed,
    })
}

/// Grows or trims a warm codebook to size n: extra points split the
/// heaviest cells at their mass median.
fn adapt_warm(h: &dyn Density1d, warm: &[f64], n: usize) -> Vec<f64> {
    let mut pts = warm.to_vec();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts.truncate(n);
    while pts.len() < n {
        let k = pts.len();
        let mut heaviest = 0usize;
        let mut hw = f64::NEG_INFINITY;
        let mut bounds = Vec::with_capacity(k);
        for i in 0..k {
            let lo = if i == 0 { 0.0 } else { 0.5 * (pts[i - 1] + pts[i]) };
            let hi = if i + 1 == k {
                1.0
            } else {
                0.5 * (pts[i] + pts[i + 1])
            };
            bounds.push((lo, hi));
            let w = h.interval_mass(lo, hi);
            if w > hw {
                hw = w;
                heaviest = i;
            }
        }
        let (lo, hi) = bounds[heaviest];
        let total = h.interval_mass(lo, hi);
        // Mass median of the heaviest cell, found by bisection.
        let (mut a, mut b) = (lo, hi);
        for _ in 0..50 {
            let mid = 0.5 * (a + b);
            if h.interval_mass(lo, mid) < 0.5 * total {
                a = mid;
            } else {
                b = mid;
            }
        }
        pts.push(0.5 * (a + b));
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        if pts.len() == k {
            // Degenerate split (duplicate midpoint); nudge deterministically.
            pts.push((pts[k - 1] + 1.0) * 0.5);
            pts.sort_by(f64::total_cmp);
        }
    }
    pts
}

// ---------------------------------------------------------------------------
// Lloyd iteration on a stored tree or atom cloud.

struct Cloud {
    d: usize,
    pts: Vec<f64>,
    w: Vec<f64>,
}

impl Cloud {
    fn of(m: &DyadicMeasure) -> Cloud {
        if let Some((pts, w)) = &m.atoms {
            let d = m.d as usize;
            let mut flat = Vec::with_capacity(pts.len() * d);
            for p in pts {
                flat.extend_from_slice(p);
            }
            return Cloud {
                d,
                pts: flat,
                w: w.clone(),
            };
        }
        let lvl = m.level(m.max_depth);
        let d = m.d as usize;
        let stride = m.stride();
        let mut flat = vec![0.0f64; lvl.keys.len() * d];
        for (i, &k) in lvl.keys.iter().enumerate() {
            cube_center(k, m.max_depth, m.d, stride, &mut flat[i * d..(i + 1) * d]);
        }
        Cloud {
            d,
            pts: flat,
            w: lvl.mass.clone(),
        }
    }

    fn len(&self) -> usize {
        self.w.len()
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.pts[i * self.d..(i + 1) * self.d]
    }
}

/// Weighted objective of one cell for the generic coordinate-descent step.
fn cell_objective(cloud: &Cloud, members: &[u32], norm: Norm, y: &[f64], r: f64) -> f64 {
    comp_sum(members.iter().map(|&i| {
        let d = norm.dist(cloud.point(i as usize), y);
        let w = cloud.w[i as usize];
        if r == 0.0 {
            w * d.ln()
        } else {
            w * d.powf(r)
        }
    }))
}

fn lloyd_cloud_once(
    cloud: &Cloud,
    norm: Norm,
    start: &[Vec<f64>],
    r: f64,
    max_iters: usize,
) -> (f64, Vec<Vec<f64>>, bool) {
    let d = cloud.d;
    let n = start.len();
    let mut code: Vec<f64> = start.iter().flat_map(|p| p.iter().copied()).collect();
    let mut v_prev = worst(r);
    let mut converged = false;
    let mut assign = vec![0u32; cloud.len()];
    for _ in 0..max_iters {
        // Assignment pass; tracks the moment of the current codebook.
        let mut v_terms = Vec::with_capacity(cloud.len());
        for i in 0..cloud.len() {
            let x = cloud.point(i);
            let mut bd = f64::INFINITY;
            let mut bj = 0u32;
            for j in 0..n {
                let dj = norm.dist(x, &code[j * d..(j + 1) * d]);
                if dj < bd {
                    bd = dj;
                    bj = j as u32;
                }
            }
            assign[i] = bj;
            v_terms.push(if r == 0.0 {
                cloud.w[i] * bd.ln()
            } else {
                cloud.w[i] * bd.powf(r)
            });
        }
        let v = comp_sum(v_terms);
        if v.is_finite() && v_prev.is_finite() && (v - v_prev).abs() <= 1e-9 * (1.0 + v.abs()) {
            converged = true;
            v_prev = v;
            break;
        }
        v_prev = v;
        // Bucket members per cell.
        let mut cells: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (i, &a) in assign.iter().enumerate() {
            cells[a as usize].push(i as u32);
        }
        // Empty cells grab the heaviest cell's heaviest member.
        for j in 0..n {
            if cells[j].is_empty() {
                let donor = (0..n)
                    .max_by(|&a, &b| {
                        let wa: f64 = cells[a].iter().map(|&i| cloud.w[i as usize]).sum();
                        let wb: f64 = cells[b].iter().map(|&i| cloud.w[i as usize]).sum();
                        wa.total_cmp(&wb)
                    })
                    .unwrap_or(0);
                if let Some(&grab) = cells[donor]
                    .iter()
                    .max_by(|&&a, &&b| cloud.w[a as usize].total_cmp(&cloud.w[b as usize]))
                {
                    code[j * d..(j + 1) * d].copy_from_slice(cloud.point(grab as usize));
                }
            }
        }
        // Per-cell reoptimization.
        for j in 0..n {
            if cells[j].is_empty() {
                continue;
            }
            let members = &cells[j];
            let y = &mut code[j * d..(j + 1) * d];
            if r == 2.0 && norm == Norm::Euclid {
                let mut num = vec![0.0f64; d];
                let mut den = 0.0f64;
                for &i in members {
                    let x = cloud.point(i as usize);
                    let w = cloud.w[i as usize];
                    for (nk, &xk) in num.iter_mut().zip(x) {
                        *nk += w * xk;
                    }
                    den += w;
                }
                for (yk, nk) in y.iter_mut().zip(num) {
                    *yk = nk / den;
                }
            } else if r == 1.0 && norm == Norm::Euclid {
                weiszfeld(cloud, members, y);
            } else {
                coordinate_descent(cloud, members, norm, y, r);
            }
        }
    }
    let code_pts: Vec<Vec<f64>> = (0..n).map(|j| code[j * d..(j + 1) * d].to_vec()).collect();
    (v_prev, code_pts, converged)
}

/// Geometric-median step for order 1: fixed-point iteration from the
/// weighted centroid, with distances floored to keep the weights finite.
fn weiszfeld(cloud: &Cloud, members: &[u32], y: &mut [f64]) {
    let d = cloud.d;
    let mut num = vec![0.0f64; d];
    let mut den = 0.0f64;
    for &i in members {
        let x = cloud.point(i as usize);
        let w = cloud.w[i as usize];
        for (nk, &xk) in num.iter_mut().zip(x) {
            *nk += w * xk;
        }
        den += w;
    }
    for (yk, nk) in y.iter_mut().zip(&num) {
        *yk = nk / den;
    }
    let mut cur = y.to_vec();
    for _ in 0..30 {
        let mut num = vec![0.0f64; d];
        let mut den = 0.0f64;
        for &i in members {
            let x = cloud.point(i as usize);
            let dist = Norm::Euclid.dist(x, &cur).max(1e-15);
            let wk = cloud.w[i as usize] / dist;
            for (nk, &xk) in num.iter_mut().zip(x) {
                *nk += wk * xk;
            }
            den += wk;
        }
        let mut shift = 0.0f64;
        for k in 0..d {
            let nv = num[k] / den;
            shift += (nv - cur[k]).abs();
            cur[k] = nv;
        }
        if shift < 1e-13 {
            break;
        }
    }
    y.copy_from_slice(&cur);
}

/// Generic per-cell step: two rounds of per-coordinate golden search over
/// the cell's bounding box.
fn coordinate_descent(cloud: &Cloud, members: &[u32], norm: Norm, y: &mut [f64], r: f64) {
    let d = cloud.d;
    let mut cur = y.to_vec();
    for _ in 0..2 {
        for k in 0..d {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in members {
                let xk = cloud.point(i as usize)[k];
                lo = lo.min(xk);
                hi = hi.max(xk);
            }
            if !(hi > lo) {
                cur[k] = lo;
                continue;
            }
            let trial = |v: f64| {
                let mut probe = cur.clone();
                probe[k] = v;
                cell_objective(cloud, members, norm, &probe, r)
            };
            let (best, _) = if r < 0.0 {
                golden_max(trial, lo, hi, 1e-10)
            } else {
                golden_min(trial, lo, hi, 1e-10)
            };
            cur[k] = best;
        }
    }
    y.copy_from_slice(&cur);
}

fn lloyd_cloud(
    m: &DyadicMeasure,
    norm: Norm,
    n: usize,
    r: f64,
    opts: &OptimizeOpts,
) -> Result<Quantizer, QdimError> {
    let cloud = Cloud::of(m);
    if cloud.len() == 0 {
        return Err(QdimError::InvalidSpec("target carries no mass".into()));
    }
    let d = cloud.d;
    let cum: Vec<f64> = {
        let mut acc = 0.0;
        cloud
            .w
            .iter()
            .map(|&w| {
                acc += w;
                acc
            })
            .collect()
    };
    let total = *cum.last().unwrap();
    let mut starts: Vec<Vec<Vec<f64>>> = Vec::new();
    if let Some(w) = &opts.warm {
        let mut warm = w.clone();
        warm.truncate(n);
        let mut i = 0usize;
        while warm.len() < n {
            // Pad with the heaviest cloud points not yet chosen.
            let mut order: Vec<usize> = (0..cloud.len()).collect();
            order.sort_by(|&a, &b| cloud.w[b].total_cmp(&cloud.w[a]));
            warm.push(cloud.point(order[i % order.len()]).to_vec());
            i += 1;
        }
        starts.push(warm);
    }
    // With a warm codebook, starts = 0 means polish the warm start alone.
    let n_random = if opts.warm.is_some() {
        opts.starts
    } else {
        opts.starts.max(1)
    };
    for s in 0..n_random {
        let mut rng = ChaCha20Rng::seed_from_u64(opts.seed.wrapping_add(s as u64));
        let mut chosen: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut guard = 0usize;
        while chosen.len() < n && guard < 20 * n {
            guard += 1;
            let u: f64 = rng.gen::<f64>() * total;
            let idx = cum.partition_point(|&c| c < u).min(cloud.len() - 1);
            let p = cloud.point(idx).to_vec();
            if !chosen.contains(&p) {
                chosen.push(p);
            }
        }
        while chosen.len() < n {
            // Cloud has fewer distinct points than n; duplicates are fine,
            // the empty-cell relocation separates them.
            chosen.push(cloud.point(chosen.len() % cloud.len()).to_vec());
        }
        starts.push(chosen);
    }
    let runs: Vec<(f64, Vec<Vec<f64>>, bool)> = exec::map_indexed(opts.mode, starts.len(), |i| {
        lloyd_cloud_once(&cloud, norm, &starts[i], r, opts.max_iters)
    });
    let mut best = 0usize;
    for i in 1..runs.len() {
        if better(r, runs[i].0, runs[best].0) {
            best = i;
        }
    }
    let (_, code, converged) = runs.into_iter().nth(best).expect("no lloyd runs");
    // Report the streaming evaluation of the winner so the value agrees
    // with `distortion` and carries its certification bound.
    let cb = FlatCodebook::from_points(&code, d)?;
    let dist = match &m.atoms {
        Some((pts, w)) => atomic_distortion(pts, w, norm, &cb, r),
        None => tree_distortion(m, norm, &cb, r, opts.mode, None)?,
    };
    Ok(Quantizer {
        codebook: code,
        r,
        v: dist.v,
        error: dist.error,
        bound: dist.bound,
        diverged: dist.diverged,
        converged,
        method: format!("lloyd(starts={})", starts.len()),
        seed: opts.seed,
    })
}

// ---------------------------------------------------------------------------
// Exhaustive subset search.

fn binomial(m: usize, n: usize) -> u128 {
    if n > m {
        return 0;
    }
    let n = n.min(m - n);
    let mut acc: u128 = 1;
    for i in 0..n {
        acc = acc.saturating_mul((m - i) as u128) / (i as u128 + 1);
        if acc > 1u128 << 64 {
            return u128::MAX;
        }
    }
    acc
}

fn exhaustive(t: &Target, n: usize, r: f64, opts: &OptimizeOpts) -> Result<Quantizer, QdimError> {
    let candidates: Vec<Vec<f64>> = match &opts.candidates {
        Some(c) => c.clone(),
        None => match t {
            Target::Measure { m, .. } if m.atoms.is_some() => {
                m.atoms.as_ref().unwrap().0.clone()
            }
            _ => {
                return Err(QdimError::InvalidSpec(
                    "exhaustive search needs an explicit candidate list".into(),
                ))
            }
        },
    };
    let m_cand = candidates.len();
    if n > m_cand {
        return Err(QdimError::InvalidSpec(format!(
            "codebook size {n} exceeds the {m_cand} candidates"
        )));
    }
    if binomial(m_cand, n) > 2_000_000 {
        return Err(QdimError::Unsupported(format!(
            "{m_cand} choose {n} subsets exceed the exhaustive budget"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut best_v = worst(r);
    let mut best_idx: Option<Vec<usize>> = None;
    loop {
        let subset: Vec<Vec<f64>> = idx.iter().map(|&i| candidates[i].clone()).collect();
        let dist = distortion(t, &subset, r, opts.mode)?;
        if best_idx.is_none() || better(r, dist.v, best_v) {
            best_v = dist.v;
            best_idx = Some(idx.clone());
        }
        // Next lexicographic combination.
        let mut k = n;
        loop {
            if k == 0 {
                break;
            }
            k -= 1;
            if idx[k] != k + m_cand - n {
                idx[k] += 1;
                for j in k + 1..n {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
            if k == 0 {
                let code: Vec<Vec<f64>> = best_idx
                    .expect("at least one subset evaluated")
                    .into_iter()
                    .map(|i| candidates[i].clone())
                    .collect();
                let dist = distortion(t, &code, r, opts.mode)?;
                return Ok(Quantizer {
                    codebook: code,
                    r,
                    v: dist.v,
                    error: dist.error,
                    bound: dist.bound,
                    diverged: dist.diverged,
                    converged: true,
                    method: format!("exhaustive(candidates={m_cand})"),
                    seed: opts.seed,
                });
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Error curves and scaling fits.

#[derive(Debug, Clone, Serialize)]
pub struct ErrorPoint {
    pub n: usize,
    pub v: f64,
    pub error: f64,
}

/// Quantization errors across codebook sizes with the scaling fit
/// ln n = D * (-ln e) + const over the deepest half of the curve.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorCurve {
    pub r: f64,
    pub kappa: f64,
    pub points: Vec<ErrorPoint>,
    pub codebooks: Vec<Vec<Vec<f64>>>,
    /// Fitted quantization dimension; NaN with fewer than two usable points.
    pub d_hat: f64,
    /// Geometric mean of n^(1/kappa) * e over the fit window.
    pub c_hat: f64,
    pub diverged: bool,
}

pub fn error_curve(
    t: &Target,
    r: f64,
    n_list: &[usize],
    kappa: Option<f64>,
    opts: &OptimizeOpts,
) -> Result<ErrorCurve, QdimError> {
    if n_list.is_empty() {
        return Err(QdimError::InvalidSpec("empty size list".into()));
    }
    let mut sizes = n_list.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes[0] == 0 {
        return Err(QdimError::InvalidSpec("codebook size must be >= 1".into()));
    }

    let mut points = Vec::with_capacity(sizes.len());
    let mut codebooks = Vec::with_capacity(sizes.len());
    let mut diverged = false;

    if opts.strategy == Strategy::Dp1d {
        let h = match t {
            Target::Density { h, .. } => *h,
            Target::Measure { .. } => {
                return Err(QdimError::Unsupported(
                    "the dynamic program needs a 1d density target".into(),
                ))
            }
        };
        if let Some(why) = divergence_reason(t, r) {
            let _ = why;
            diverged = true;
        } else {
            let sweep = dp1d_curve(h, *sizes.last().unwrap(), r, opts.grid_g, LayerSolver::Auto)?;
            let t_mass = h.total_mass();
            for &n in &sizes {
                let (v_raw, pts) = &sweep[n - 1];
                let v = v_raw / t_mass;
                let (error, point_div) = error_from(v, r);
                diverged |= point_div;
                points.push(ErrorPoint { n, v, error });
                codebooks.push(pts.iter().map(|&x| vec![x]).collect());
            }
        }
    } else {
        let mut run_opts = opts.clone();
        for &n in &sizes {
            let q = optimize_codebook(t, n, r, &run_opts)?;
            if q.diverged {
                diverged = true;
                break;
            }
            points.push(ErrorPoint {
                n,
                v: q.v,
                error: q.error,
            });
            run_opts.warm = Some(q.codebook.clone());
            codebooks.push(q.codebook);
        }
    }

    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.error.is_finite() && p.error > 0.0)
        .map(|p| (-(p.error.ln()), (p.n as f64).ln()))
        .collect();
    let window = deep_half(&usable);
    let d_hat = if window.len() >= 2 {
        lsq(window).0
    } else {
        f64::NAN
    };
    let kappa = kappa.unwrap_or(d_hat);
    let c_hat = if window.len() >= 2 && kappa.is_finite() && kappa != 0.0 {
        let logs: Vec<f64> = window
            .iter()
            .map(|&(neg_ln_e, ln_n)| ln_n / kappa - neg_ln_e)
            .collect();
        (comp_sum(logs.iter().copied()) / logs.len() as f64).exp()
    } else {
        f64::NAN
    };
    Ok(ErrorCurve {
        r,
        kappa,
        points,
        codebooks,
        d_hat,
        c_hat,
        diverged,
    })
}

// ---------------------------------------------------------------------------
// Closed-form bound checks.

/// Constant of the uniform-moment bound: C = 2^-r + 18^d / (2^r - 2^-d),
/// finite for -d < r < 0.
pub fn lebesgue_constant(r: f64, d: u32) -> f64 {
    2f64.powf(-r) + 18f64.powi(d as i32) / (2f64.powf(r) - 2f64.powf(-(d as f64)))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LebesgueCheck {
    pub m: usize,
    pub r: f64,
    pub lhs: f64,
    pub constant: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Checks int d(x,A)^r dLambda <= C * m^-r for a 1d codebook of size m
/// and order -1 < r < 0.
pub fn lebesgue_bound_check(a: &[f64], r: f64) -> Result<LebesgueCheck, QdimError> {
    if !(r > -1.0 && r < 0.0) {
        return Err(QdimError::InvalidSpec(format!(
            "uniform-moment bound needs -1 < r < 0, got {r}"
        )));
    }
    let points: Vec<Vec<f64>> = a.iter().map(|&x| vec![x]).collect();
    let lhs = density_distortion(&crate::density::Uniform, &points, r)?.v;
    let mut dedup = a.to_vec();
    dedup.sort_by(f64::total_cmp);
    dedup.dedup();
    let m = dedup.len();
    let constant = lebesgue_constant(r, 1);
    let rhs = constant * (m as f64).powf(-r);
    Ok(LebesgueCheck {
        m,
        r,
        lhs,
        constant,
        rhs,
        holds: lhs <= rhs,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MixtureReport {
    pub r: f64,
    pub n: usize,
    pub n_parts: Vec<usize>,
    /// Optimized moment of the weighted mixture at size n.
    pub v_mix: f64,
    /// Sum of component moments at full size n (upper envelope).
    pub upper: f64,
    /// Sum of component moments at the split sizes (lower envelope).
    pub lower: f64,
    pub slack: f64,
    pub upper_holds: bool,
    pub lower_holds: bool,
}

/// Verifies the mixture sandwich for r < 0: splitting a size-n budget over
/// the components can only lose, and letting every component use all n
/// points can only win, so
/// sum_i s_i V_{n_i}(nu_i) <= V_n(sum_i s_i nu_i) <= sum_i s_i V_n(nu_i).
pub fn mixture_bounds_check(
    parts: &[(f64, &dyn Density1d)],
    n: usize,
    n_parts: &[usize],
    r: f64,
    slack: f64,
    opts: &OptimizeOpts,
) -> Result<MixtureReport, QdimError> {
    if !(r < 0.0) {
        return Err(QdimError::InvalidSpec(format!(
            "mixture sandwich is stated for r < 0, got {r}"
        )));
    }
    if n_parts.len() != parts.len() || n_parts.iter().any(|&k| k == 0) {
        return Err(QdimError::InvalidSpec(
            "one positive size per mixture component required".into(),
        ));
    }
    if n_parts.iter().sum::<usize>() > n {
        return Err(QdimError::InvalidSpec(
            "component sizes must sum to at most n".into(),
        ));
    }
    let mix = crate::density::MixtureDensity::new(parts.to_vec())?;
    let v_mix = optimize_codebook(&Target::raw_density(&mix), n, r, opts)?.v;
    let mut upper = 0.0;
    let mut lower = 0.0;
    for (&(s, h), &k) in parts.iter().zip(n_parts) {
        let t = Target::raw_density(h);
        upper += s * optimize_codebook(&t, n, r, opts)?.v;
        lower += s * optimize_codebook(&t, k, r, opts)?.v;
    }
    Ok(MixtureReport {
        r,
        n,
        n_parts: n_parts.to_vec(),
        v_mix,
        upper,
        lower,
        slack,
        upper_holds: v_mix <= upper * (1.0 + slack),
        lower_holds: v_mix >= lower * (1.0 - slack),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{example_density, MixtureDensity, PiecewiseConst, Uniform};
    use crate::dyadic::build_measure;
    use crate::types::{MeasureKind, MeasureSpec};

    fn uniform_spec() -> MeasureSpec {
        MeasureSpec {
            d: 1,
            kind: MeasureKind::Ifs {
                offsets: vec![vec![0.0], vec![0.5]],
                probabilities: vec![0.5, 0.5],
            },
        }
    }

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
                probabilities: vec![0.66, 0.2, 0.08, 0.06],
            },
        }
    }

    fn atoms_spec(points: Vec<Vec<f64>>, weights: Vec<f64>) -> MeasureSpec {
        MeasureSpec {
            d: points[0].len() as u32,
            kind: MeasureKind::Atomic { points, weights },
        }
    }

    fn midpoints(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| vec![(2 * i + 1) as f64 / (2 * n) as f64])
            .collect()
    }

    /// n midpoint cells of width 1/n: int |x-c|^(-1/2) per cell is
    /// 4*sqrt(1/(2n)), summing to sqrt(8n); e = V^(1/r) = (8n)^(-1) * ...
    #[test]
    fn uniform_midpoint_moments_match_closed_form() {
        let t = Target::raw_density(&Uniform);
        for &n in &[1usize, 4, 16] {
            let dist = distortion(&t, &midpoints(n), -0.5, ExecMode::Sequential).unwrap();
            let v_expect = (8.0 * n as f64).sqrt();
            assert!((dist.v - v_expect).abs() <= 1e-12 * v_expect);
            let e_expect = 0.125 / n as f64;
            assert!((dist.error - e_expect).abs() <= 1e-12 * e_expect);
            assert!(!dist.diverged);
        }
        // Doubling the codebook scales V by sqrt(2) (self-similar halves).
        let v4 = distortion(&t, &midpoints(4), -0.5, ExecMode::Sequential)
            .unwrap()
            .v;
        let v8 = distortion(&t, &midpoints(8), -0.5, ExecMode::Sequential)
            .unwrap()
            .v;
        assert!((v8 - 2f64.sqrt() * v4).abs() < 1e-12 * v8);
        assert!((v8 - 8.0).abs() < 1e-12 * 8.0);
    }

    #[test]
    fn single_point_first_moment_is_quarter() {
        let t = Target::raw_density(&Uniform);
        let dist = distortion(&t, &[vec![0.5]], 1.0, ExecMode::Sequential).unwrap();
        assert!((dist.v - 0.25).abs() < 1e-14);
        assert!((dist.error - 0.25).abs() < 1e-14);
    }

    #[test]
    fn atom_hit_diverges_distortion() {
        let spec = atoms_spec(vec![vec![0.5]], vec![1.0]);
        let m = build_measure(&spec, 4, 1e-12).unwrap();
        let t = Target::measure(&m, Norm::Euclid);
        let dist = distortion(&t, &[vec![0.5]], -0.5, ExecMode::Sequential).unwrap();
        assert!(dist.diverged);
        assert_eq!(dist.error, 0.0);
        assert_eq!(dist.v, f64::INFINITY);
        // A codebook missing the atom stays finite.
        let dist = distortion(&t, &[vec![0.25]], -0.5, ExecMode::Sequential).unwrap();
        assert!(!dist.diverged);
        assert!((dist.v - 0.25f64.powf(-0.5)).abs() < 1e-14);
    }

    /// The optimal 4-point codebook for the uniform density at r = -1/2
    /// is the midpoint grid with n*e = 1/8.
    #[test]
    fn dp_finds_uniform_optimum() {
        let opts = OptimizeOpts {
            strategy: Strategy::Dp1d,
            ..OptimizeOpts::default()
        };
        let t = Target::raw_density(&Uniform);
        let q = optimize_codebook(&t, 4, -0.5, &opts).unwrap();
        let e_expect = 0.03125;
        assert!((q.error - e_expect).abs() <= 0.005 * e_expect);
        for (got, want) in q.codebook.iter().zip([0.125, 0.375, 0.625, 0.875]) {
            assert!((got[0] - want).abs() < 0.01);
        }
        assert!(!q.diverged);
    }

    /// Geometric-mean error of the uniform optimum: e_n = exp(-1) / (2n).
    #[test]
    fn dp_finds_geometric_mean_optimum() {
        let opts = OptimizeOpts {
            strategy: Strategy::Dp1d,
            ..OptimizeOpts::default()
        };
        let t = Target::raw_density(&Uniform);
        let q = optimize_codebook(&t, 4, 0.0, &opts).unwrap();
        let e_expect = (-1.0f64).exp() / 8.0;
        assert!((q.error - e_expect).abs() <= 0.005 * e_expect);
    }

    /// The divide-and-conquer row solve assumes a monotone argopt; verify
    /// it against the plain quadratic solve on a coarse grid for every
    /// order regime and both bundled closed-form densities.
    #[test]
    fn divide_and_conquer_matches_plain_dp() {
        let lin = example_density("linear2x").unwrap();
        let densities: Vec<&dyn Density1d> = vec![&Uniform, lin.density()];
        for h in densities {
            for &r in &[-0.5, 0.0, 1.0, 2.0] {
                let plain = dp1d_curve(h, 6, r, 7, LayerSolver::Plain).unwrap();
                let dc = dp1d_curve(h, 6, r, 7, LayerSolver::DivideConquer).unwrap();
                for (p, d) in plain.iter().zip(&dc) {
                    assert!(
                        (p.0 - d.0).abs() <= 1e-12 * (1.0 + p.0.abs()),
                        "value mismatch at r={r}: {} vs {}",
                        p.0,
                        d.0
                    );
                    assert_eq!(p.1, d.1, "codebook mismatch at r={r}");
                }
            }
        }
    }

    #[test]
    fn dp_grid_refinement_is_consistent() {
        let t = Target::raw_density(&Uniform);
        let mut errs = Vec::new();
        for &g in &[10u32, 12] {
            let opts = OptimizeOpts {
                strategy: Strategy::Dp1d,
                grid_g: g,
                ..OptimizeOpts::default()
            };
            errs.push(optimize_codebook(&t, 5, -0.5, &opts).unwrap().error);
        }
        let rel = (errs[0] - errs[1]).abs() / errs[1];
        assert!(rel <= 2f64.powf(-5.0), "grid drift {rel}");
    }

    #[test]
    fn lloyd_matches_dp_on_uniform() {
        let t = Target::raw_density(&Uniform);
        let dp = optimize_codebook(
            &t,
            4,
            -0.5,
            &OptimizeOpts {
                strategy: Strategy::Dp1d,
                ..OptimizeOpts::default()
            },
        )
        .unwrap();
        let ll = optimize_codebook(
            &t,
            4,
            -0.5,
            &OptimizeOpts {
                strategy: Strategy::Lloyd,
                ..OptimizeOpts::default()
            },
        )
        .unwrap();
        assert!((ll.error - dp.error).abs() <= 0.005 * dp.error);
        let ll0 = optimize_codebook(
            &t,
            3,
            0.0,
            &OptimizeOpts {
                strategy: Strategy::Lloyd,
                ..OptimizeOpts::default()
            },
        )
        .unwrap();
        let dp0 = optimize_codebook(
            &t,
            3,
            0.0,
            &OptimizeOpts {
                strategy: Strategy::Dp1d,
                ..OptimizeOpts::default()
            },
        )
        .unwrap();
        assert!((ll0.error - dp0.error).abs() <= 0.005 * dp0.error);
    }

    /// Adding a codebook point moves the moment in the favorable
    /// direction for either sign of r.
    #[test]
    fn extra_point_improves_moment() {
        let t = Target::raw_density(&Uniform);
        let small = vec![vec![0.25], vec![0.75]];
        let big = vec![vec![0.25], vec![0.5], vec![0.75]];
        let neg_small = distortion(&t, &small, -0.5, ExecMode::Sequential).unwrap();
        let neg_big = distortion(&t, &big, -0.5, ExecMode::Sequential).unwrap();
        assert!(neg_big.v > neg_small.v);
        assert!(neg_big.error < neg_small.error);
        let pos_small = distortion(&t, &small, 1.0, ExecMode::Sequential).unwrap();
        let pos_big = distortion(&t, &big, 1.0, ExecMode::Sequential).unwrap();
        assert!(pos_big.v < pos_small.v);
    }

    #[test]
    fn atomic_optimize_guards_nonpositive_orders() {
        let spec = atoms_spec(
            vec![vec![0.2], vec![0.5], vec![0.9]],
            vec![0.5, 0.3, 0.2],
        );
        let m = build_measure(&spec, 4, 1e-12).unwrap();
        let t = Target::measure(&m, Norm::Euclid);
        for &r in &[-0.5, 0.0] {
            let q = optimize_codebook(&t, 2, r, &OptimizeOpts::default()).unwrap();
            assert!(q.diverged, "r={r}");
            assert_eq!(q.error, 0.0);
            assert_eq!(q.codebook, vec![vec![0.2], vec![0.5]]);
            assert!(q.method.starts_with("divergence-guard"));
        }
    }

    #[test]
    fn density_optimize_guards_divergent_orders() {
        let t = Target::raw_density(&Uniform);
        let q = optimize_codebook(&t, 4, -1.0, &OptimizeOpts::default()).unwrap();
        assert!(q.diverged);
        assert_eq!(q.error, 0.0);

        let reg = example_density("ex29").unwrap();
        let t = Target::density(&reg);
        let q = optimize_codebook(&t, 4, -0.6, &OptimizeOpts::default()).unwrap();
        assert!(q.diverged, "below the declared threshold 1/2");
        let probe = distortion(&t, &midpoints(4), -0.4, ExecMode::Sequential).unwrap();
        assert!(!probe.diverged, "above the declared threshold");
    }

    /// On an atomic target with n = m the exhaustive search places points
    /// on every atom and reaches error 0 exactly; with n < m and r > 0 the
    /// continuous Lloyd relaxation can only do at least as well as the
    /// support-restricted search.
    #[test]
    fn lloyd_dominates_support_restricted_search() {
        let spec = atoms_spec(
            vec![vec![0.1], vec![0.35], vec![0.6], vec![0.85]],
            vec![0.4, 0.3, 0.2, 0.1],
        );
        let m = build_measure(&spec, 4, 1e-12).unwrap();
        let t = Target::measure(&m, Norm::Euclid);
        let ex_opts = OptimizeOpts {
            strategy: Strategy::Exhaustive,
            ..OptimizeOpts::default()
        };
        let q_full = optimize_codebook(&t, 4, 2.0, &ex_opts).unwrap();
        assert_eq!(q_full.error, 0.0);
        assert!(!q_full.diverged);

        let q_ex = optimize_codebook(&t, 2, 2.0, &ex_opts).unwrap();
        let q_ll = optimize_codebook(
            &t,
            2,
            2.0,
            &OptimizeOpts {
                strategy: Strategy::Lloyd,
                starts: 3,
                ..OptimizeOpts::default()
            },
        )
        .unwrap();
        assert!(q_ll.v <= q_ex.v * (1.0 + 1e-9));
    }

    /// The deepest-level center sum must sit within its own reported bound
    /// of the exact density integral.
    #[test]
    fn tree_streaming_brackets_exact_moment() {
        let m = build_measure(&uniform_spec(), 10, 1e-12).unwrap();
        let tree = Target::measure(&m, Norm::Euclid);
        let exact = Target::raw_density(&Uniform);
        let a = vec![vec![0.3]];
        for &r in &[1.0, 2.0, -0.5] {
            let stream = distortion(&tree, &a, r, ExecMode::Sequential).unwrap();
            let truth = distortion(&exact, &a, r, ExecMode::Sequential).unwrap();
            assert!(
                (stream.v - truth.v).abs() <= stream.bound,
                "r={r}: |{} - {}| > {}",
                stream.v,
                truth.v,
                stream.bound
            );
            if r > 0.0 {
                assert!(stream.bound.is_finite());
                assert!(stream.bound < 1e-2);
            } else {
                // The codebook point lies inside some leaf cell, so the
                // half-diagonal envelope cannot certify a negative order.
                assert!(stream.bound.is_infinite());
                assert!(stream.v.is_finite());
            }
        }
    }

    #[test]
    fn pruned_assignment_matches_full_scan() {
        let m = build_measure(&menger_spec(), 6, 1e-12).unwrap();
        let cb_pts = vec![
            vec![0.1, 0.2, 0.05],
            vec![0.4, 0.1, 0.3],
            vec![0.05, 0.45, 0.1],
            vec![0.3, 0.3, 0.45],
            vec![0.02, 0.02, 0.4],
        ];
        let cb = FlatCodebook::from_points(&cb_pts, 3).unwrap();
        for &r in &[1.0, 2.0] {
            let full =
                tree_distortion(&m, Norm::Euclid, &cb, r, ExecMode::Sequential, Some(false))
                    .unwrap();
            let pruned =
                tree_distortion(&m, Norm::Euclid, &cb, r, ExecMode::Sequential, Some(true))
                    .unwrap();
            assert_eq!(full.v.to_bits(), pruned.v.to_bits(), "r={r}");
            assert_eq!(full.bound.to_bits(), pruned.bound.to_bits(), "r={r}");
        }
    }

    #[test]
    fn parallel_and_sequential_distortion_agree_bitwise() {
        let m = build_measure(&menger_spec(), 6, 1e-12).unwrap();
        let t = Target::measure(&m, Norm::Euclid);
        let a = vec![vec![0.2, 0.2, 0.2], vec![0.7, 0.1, 0.1]];
        let seq = distortion(&t, &a, 1.0, ExecMode::Sequential).unwrap();
        let par = distortion(&t, &a, 1.0, ExecMode::Parallel).unwrap();
        assert_eq!(seq.v.to_bits(), par.v.to_bits());
    }

    #[test]
    fn parallel_and_sequential_lloyd_agree_bitwise() {
        let m = build_measure(&menger_spec(), 5, 1e-12).unwrap();
        let t = Target::measure(&m, Norm::Max);
        let mk = |mode| OptimizeOpts {
            strategy: Strategy::Lloyd,
            seed: 7,
            starts: 2,
            max_iters: 15,
            mode,
            ..OptimizeOpts::default()
        };
        let seq = optimize_codebook(&t, 5, 1.0, &mk(ExecMode::Sequential)).unwrap();
        let par = optimize_codebook(&t, 5, 1.0, &mk(ExecMode::Parallel)).unwrap();
        assert_eq!(seq.v.to_bits(), par.v.to_bits());
        assert_eq!(seq.codebook, par.codebook);
    }

    /// Rehearses the scaling fit on the uniform density: D = 1 and
    /// n * e_n = 1/8 for every n.
    #[test]
    fn error_curve_recovers_uniform_scaling() {
        let t = Target::raw_density(&Uniform);
        let opts = OptimizeOpts {
            strategy: Strategy::Dp1d,
            ..OptimizeOpts::default()
        };
        let curve = error_curve(&t, -0.5, &[2, 4, 8, 16, 32, 64], Some(1.0), &opts).unwrap();
        assert!(!curve.diverged);
        assert!((curve.d_hat - 1.0).abs() <= 0.03, "d_hat {}", curve.d_hat);
        assert!((curve.c_hat - 0.125).abs() <= 0.02 * 0.125, "c_hat {}", curve.c_hat);
        for w in curve.points.windows(2) {
            assert!(w[1].error < w[0].error);
        }
        for p in &curve.points {
            if p.n >= 8 {
                let ne = p.n as f64 * p.error;
                assert!((ne - 0.125).abs() <= 0.02 * 0.125, "n={} ne={}", p.n, ne);
            }
        }
    }

    #[test]
    fn error_curve_flags_divergent_target() {
        let reg = example_density("ex29").unwrap();
        let t = Target::density(&reg);
        let opts = OptimizeOpts {
            strategy: Strategy::Dp1d,
            ..OptimizeOpts::default()
        };
        let curve = error_curve(&t, -0.6, &[2, 4], None, &opts).unwrap();
        assert!(curve.diverged);
        assert!(curve.points.is_empty());
        assert!(curve.d_hat.is_nan());
    }

    /// Errors are ordered in r: for s <= r <= 0, e_{n,s} <= e_{n,r} <= e_{n,0}.
    #[test]
    fn error_is_monotone_in_order() {
        let t = Target::raw_density(&Uniform);
        let opts = OptimizeOpts {
            strategy: Strategy::Dp1d,
            grid_g: 12,
            ..OptimizeOpts::default()
        };
        let e_low = optimize_codebook(&t, 4, -0.8, &opts).unwrap().error;
        let e_mid = optimize_codebook(&t, 4, -0.3, &opts).unwrap().error;
        let e_zero = optimize_codebook(&t, 4, 0.0, &opts).unwrap().error;
        assert!(e_low <= e_mid * 1.01, "{e_low} vs {e_mid}");
        assert!(e_mid <= e_zero * 1.01, "{e_mid} vs {e_zero}");
    }

    #[test]
    fn lebesgue_bound_holds_on_examples() {
        // A = {1/2}: lhs = 2 * int_0^{1/2} u^{-1/2} du = 2 sqrt(2).
        let one = lebesgue_bound_check(&[0.5], -0.5).unwrap();
        assert!((one.lhs - 8f64.sqrt()).abs() < 1e-12);
        assert!((one.constant - 88.33).abs() < 0.01);
        assert!(one.holds);
        // 16 midpoints: lhs = sqrt(8 * 16) against C * 16^{1/2}.
        let pts: Vec<f64> = (0..16).map(|i| (2 * i + 1) as f64 / 32.0).collect();
        let many = lebesgue_bound_check(&pts, -0.5).unwrap();
        assert!((many.lhs - 128f64.sqrt()).abs() < 1e-10);
        assert!((many.rhs - many.constant * 4.0).abs() < 1e-9);
        assert!(many.holds);
        assert!(lebesgue_bound_check(&[0.5], -1.0).is_err());
    }

    /// Mixing two uniform halves with split sizes (4,4) reproduces the
    /// uniform optimum exactly: both sandwich bounds are tight.
    #[test]
    fn mixture_sandwich_is_tight_for_uniform_halves() {
        let left = PiecewiseConst::new("left-half", vec![(0.0, 0.5, 1.0)]);
        let right = PiecewiseConst::new("right-half", vec![(0.5, 1.0, 1.0)]);
        let parts: Vec<(f64, &dyn Density1d)> = vec![(0.5, &left), (0.5, &right)];
        let opts = OptimizeOpts {
            strategy: Strategy::Dp1d,
            grid_g: 12,
            ..OptimizeOpts::default()
        };
        let rep = mixture_bounds_check(&parts, 8, &[4, 4], -0.5, 0.02, &opts).unwrap();
        assert!(rep.upper_holds && rep.lower_holds);
        // The mixture is the uniform density, so V_8 = sqrt(64) = 8. Each
        // half is a rescaled uniform with V_4(half) = 2^{1/2} sqrt(32) = 8,
        // which makes the lower envelope tight as well.
        assert!((rep.v_mix - 8.0).abs() <= 0.01 * 8.0, "v_mix {}", rep.v_mix);
        assert!((rep.lower - 8.0).abs() <= 0.01 * 8.0, "lower {}", rep.lower);
        assert!(rep.upper >= rep.v_mix);
        // Mixture wrapper itself integrates like the uniform density.
        let mix = MixtureDensity::new(parts).unwrap();
        let u = distortion(
            &Target::raw_density(&Uniform),
            &midpoints(8),
            -0.5,
            ExecMode::Sequential,
        )
        .unwrap();
        let m = distortion(
            &Target::raw_density(&mix),
            &midpoints(8),
            -0.5,
            ExecMode::Sequential,
        )
        .unwrap();
        assert!((u.v - m.v).abs() < 1e-10);
    }
}
