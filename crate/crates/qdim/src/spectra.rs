//! Partition-function spectra of a dyadic measure at arbitrary real order:
//! the mass moment scaling beta_n(q), the order-r descendant-envelope
//! moment scaling tau_n(q), extrapolated critical exponents q_r with the
//! dimension identity D_r = r q_r / (1 - q_r), the entropy dimension at
//! order zero, boundary limits toward the lowest admissible order, and a
//! regularity report around the critical exponent.
//!
//! The envelope value of a cube Q at order r is
//! J(Q) = max over stored descendants Q' of Q of  nu(Q') * side(Q')^r,
//! which for r >= 0 is attained at Q itself and for r < 0 rewards deep
//! descendants; tau_n(q) = log2(sum over level-n cubes of J^q) / n.

use crate::dyadic::{dim_infty_estimate, parent_key, DyadicMeasure};
use crate::numerics::{bisect, deep_half, log_sum_exp_weighted, tail_estimate};
use crate::types::{CubeIndex, QdimError, TAIL_RULE};

const LN2: f64 = core::f64::consts::LN_2;

/// Distinct ln-values with multiplicities for one level.
#[derive(Debug, Clone, Default)]
pub struct LevelValues {
    pub n: u32,
    pub ln_vals: Vec<f64>,
    pub counts: Vec<f64>,
}

impl LevelValues {
    fn from_values(n: u32, mut vals: Vec<f64>) -> Self {
        vals.retain(|v| *v > 0.0);
        vals.sort_by(f64::total_cmp);
        let mut ln_vals = Vec::new();
        let mut counts = Vec::new();
        for v in vals {
            if ln_vals.is_empty() || v.ln() != *ln_vals.last().unwrap() {
                ln_vals.push(v.ln());
                counts.push(1.0);
            } else {
                *counts.last_mut().unwrap() += 1.0;
            }
        }
        LevelValues { n, ln_vals, counts }
    }

    /// log2 of the q-th moment sum over this level.
    pub fn log2_moment(&self, q: f64) -> f64 {
        let terms: Vec<(f64, f64)> = self
            .ln_vals
            .iter()
            .zip(&self.counts)
            .map(|(&lv, &c)| (q * lv, c))
            .collect();
        log_sum_exp_weighted(&terms) / LN2
    }

    pub fn total_count(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Per-level moment tables for either cube masses or envelope values.
#[derive(Debug, Clone)]
pub struct MomentTable {
    /// Order r for envelope tables; `None` for plain mass tables.
    pub r: Option<f64>,
    /// Entries for levels 1..=max_depth (index 0 is level 1).
    pub levels: Vec<LevelValues>,
}

impl MomentTable {
    /// Dedup table of cube masses per level.
    pub fn masses(m: &DyadicMeasure) -> Self {
        let levels = (1..=m.max_depth)
            .map(|n| LevelValues::from_values(n, m.level(n).mass.clone()))
            .collect();
        MomentTable { r: None, levels }
    }

    /// Dedup table of envelope values per level, swept bottom-up: each
    /// cube's J is the max of its own nu * side^r and its children's J.
    pub fn envelopes(m: &DyadicMeasure, r: f64) -> Self {
        let arrays = envelope_arrays(m, r);
        let levels_out = (1..=m.max_depth)
            .map(|n| LevelValues::from_values(n, arrays[n as usize].clone()))
            .collect();
        MomentTable {
            r: Some(r),
            levels: levels_out,
        }
    }

    pub fn level(&self, n: u32) -> &LevelValues {
        &self.levels[n as usize - 1]
    }

    pub fn max_level(&self) -> u32 {
        self.levels.len() as u32
    }

    /// The scaling quotient at one level: log2(moment sum)/n.
    pub fn scaling(&self, q: f64, n: u32) -> f64 {
        self.level(n).log2_moment(q) / n as f64
    }

    /// Extrapolated scaling exponent over the deepest half of the levels.
    pub fn scaling_hat(&self, q: f64) -> f64 {
        let seq: Vec<(f64, f64)> = (1..=self.max_level())
            .map(|n| (n as f64, self.scaling(q, n)))
            .collect();
        tail_estimate(&seq).value
    }
}

/// Envelope values for every stored cube, one array per level (index 0 is
/// the root level), aligned with the measure's per-level key order. The
/// sweep runs bottom-up: each cube's J is the max of its own nu * side^r
/// and its children's J.
pub fn envelope_arrays(m: &DyadicMeasure, r: f64) -> Vec<Vec<f64>> {
    let stride = m.stride();
    let own = |n: u32, mass: &[f64]| -> Vec<f64> {
        let w = 2f64.powf(-(n as f64) * r);
        mass.iter().map(|&v| v * w).collect()
    };
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(m.max_depth as usize + 1);
    for n in 0..=m.max_depth {
        out.push(own(n, &m.level(n).mass));
    }
    for n in (0..m.max_depth).rev() {
        let parents = m.level(n);
        let children = m.level(n + 1);
        for (i, &ck) in children.keys.iter().enumerate() {
            let pk = parent_key(ck, m.d, stride);
            // Positive children always have a stored positive parent.
            let j = parents
                .find(pk)
                .expect("child cube without stored parent");
            let cj = out[n as usize + 1][i];
            if cj > out[n as usize][j] {
                out[n as usize][j] = cj;
            }
        }
    }
    out
}

/// The envelope value of one cube, by exhaustive descent through the stored
/// subtree (cost grows with the subtree; bulk work should use `MomentTable`).
pub fn j_value(m: &DyadicMeasure, r: f64, cube: &CubeIndex) -> Option<f64> {
    let mass = m.mass_of(cube)?;
    if mass == 0.0 {
        return Some(0.0);
    }
    let stride = m.stride();
    let key = crate::dyadic::pack_key(&cube.coords, stride);
    Some(j_by_key(m, r, cube.level, key, mass))
}

fn j_by_key(m: &DyadicMeasure, r: f64, level: u32, key: u64, mass: f64) -> f64 {
    let own = mass * 2f64.powf(-(level as f64) * r);
    if level == m.max_depth {
        return own;
    }
    let stride = m.stride();
    let next = m.level(level + 1);
    let mut best = own;
    for branch in 0..(1u32 << m.d) {
        let ck = 2 * key + crate::dyadic::child_offset_key(branch, m.d, stride);
        if let Some(i) = next.find(ck) {
            best = best.max(j_by_key(m, r, level + 1, ck, next.mass[i]));
        }
    }
    best
}

/// Mass moment scaling at one level: beta_n(q) = log2(sum nu^q)/n.
pub fn beta_n(m: &DyadicMeasure, q: f64, n: u32) -> f64 {
    MomentTable::masses(m).scaling(q, n)
}

/// One tau_n evaluation with its diagnostic flags.
#[derive(Debug, Clone)]
pub struct TauValue {
    pub value: f64,
    /// Same moment with every cube's envelope truncated to its own value
    /// nu * side^r; identical to beta_n(q) - q r.
    pub own_only_value: f64,
    /// Set when the two differ by more than 1e-6: the envelope still moves
    /// with the resolution depth at this level.
    pub truncation_sensitive: bool,
    /// Set when r is at or below the negated local scaling estimate, where
    /// the scaling exponent stops being meaningful.
    pub low_order_warning: bool,
}

/// Envelope moment scaling at one level, with truncation sensitivity
/// (full-depth envelope vs own-value-only) and a low-order warning.
pub fn tau_n(m: &DyadicMeasure, r: f64, q: f64, n: u32) -> TauValue {
    let table = MomentTable::envelopes(m, r);
    tau_n_from(m, &table, r, q, n)
}

/// Same as `tau_n` but reusing a prebuilt envelope table.
pub fn tau_n_from(m: &DyadicMeasure, table: &MomentTable, r: f64, q: f64, n: u32) -> TauValue {
    debug_assert_eq!(table.r, Some(r));
    let value = table.scaling(q, n);
    let own_only_value = beta_n(m, q, n) - q * r;
    let low_order_warning = match dim_infty_estimate(m) {
        Ok(est) => r <= -est.value,
        Err(_) => false,
    };
    TauValue {
        value,
        own_only_value,
        truncation_sensitive: (value - own_only_value).abs() > 1e-6,
        low_order_warning,
    }
}

/// A priori bracket for the critical exponent q_r from the box dimension
/// estimate and the local scaling estimate.
///
/// For r < 0 the lower bound is dim_M/(dim_M + r) and the upper bound is
/// 1 + max(dim_M - dim_infty, -r)/(dim_infty + r); the max keeps the
/// bracket ordered when the two dimension estimates coincide (the spread
/// term alone would fall below the lower bound, which the envelope moment
/// at q = 1 never does, since tau(1) >= -r). For r > 0 the bracket is
/// (0, dim_M/(dim_M + r)), and at r = 0 both ends pin q = 1.
pub fn qr_bounds(dim_m: f64, dim_infty: f64, r: f64) -> Result<(f64, f64), QdimError> {
    if r == 0.0 {
        return Ok((1.0, 1.0));
    }
    if r > 0.0 {
        return Ok((0.0, dim_m / (dim_m + r)));
    }
    if dim_infty + r <= 0.0 {
        return Err(QdimError::InvalidBracket {
            lo: f64::NAN,
            hi: f64::NAN,
            why: format!(
                "order {r} at or below the negated local scaling exponent {dim_infty}"
            ),
        });
    }
    let lo = dim_m / (dim_m + r);
    let hi = 1.0 + (dim_m - dim_infty).max(-r) / (dim_infty + r);
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(QdimError::InvalidBracket {
            lo,
            hi,
            why: "dimension estimates give an empty bracket".into(),
        });
    }
    Ok((lo, hi))
}

/// Critical exponent and derived quantization dimension.
#[derive(Debug, Clone)]
pub struct CriticalQ {
    pub q_r: f64,
    /// r q_r / (1 - q_r); at r = 0 the entropy dimension is substituted.
    pub d_r: f64,
    pub bracket: (f64, f64),
    pub tau_at_root: f64,
    pub dim_m: f64,
    pub dim_infty: f64,
    pub protocol: &'static str,
}

/// Root of the extrapolated envelope scaling q -> tau_hat(q), bisected to
/// |dq| <= 1e-6 inside the a priori bracket (widened a hair so roots that
/// sit exactly on a bound are still crossed).
pub fn critical_q(m: &DyadicMeasure, r: f64, protocol: &str) -> Result<CriticalQ, QdimError> {
    if !(protocol.is_empty() || protocol == TAIL_RULE) {
        return Err(QdimError::Unsupported(format!(
            "unknown extrapolation protocol {protocol:?} (expected {TAIL_RULE:?})"
        )));
    }
    if m.max_depth < 8 {
        return Err(QdimError::InvalidSpec(format!(
            "critical exponent requires depth >= 8, got {}",
            m.max_depth
        )));
    }
    let est = dim_infty_estimate(m)?;
    let dim_infty = est.value;
    if r <= -dim_infty + 1e-3 && r < 0.0 {
        return Err(QdimError::Divergent {
            r,
            threshold: -dim_infty,
            what: "critical exponent at or below the negated local scaling exponent".into(),
        });
    }
    let mass = MomentTable::masses(m);
    let dim_m = {
        let seq: Vec<(f64, f64)> = (1..=mass.max_level())
            .map(|n| (n as f64, mass.scaling(0.0, n)))
            .collect();
        tail_estimate(&seq).value
    };
    let (lo, hi) = qr_bounds(dim_m, dim_infty, r)?;
    let table = MomentTable::envelopes(m, r);
    let f = |q: f64| table.scaling_hat(q);
    let lo_w = lo - (lo.abs() * 1e-6).max(1e-9);
    let hi_w = hi + (hi.abs() * 1e-6).max(1e-9);
    let f_lo = f(lo_w);
    let f_hi = f(hi_w);
    if f_lo < 0.0 || f_hi > 0.0 {
        return Err(QdimError::NoCrossing {
            lo: lo_w,
            hi: hi_w,
            f_lo,
            f_hi,
        });
    }
    let q_r = bisect(&f, lo_w, hi_w, 1e-6);
    let d_r = if r == 0.0 {
        d_zero(m).value
    } else {
        r * q_r / (1.0 - q_r)
    };
    Ok(CriticalQ {
        q_r,
        d_r,
        bracket: (lo, hi),
        tau_at_root: f(q_r),
        dim_m,
        dim_infty,
        protocol: TAIL_RULE,
    })
}

/// Renyi-style spectrum value at order r: for q != 1 this is
/// (tau_hat(q) + q r)/(1 - q) (equal to beta_hat(q)/(1 - q) whenever the
/// envelope moment matches the truncation-free one), and at q = 1 the
/// extrapolated entropy quotient sum nu log2(1/nu) / n.
pub fn renyi(m: &DyadicMeasure, r: f64, q: f64) -> f64 {
    if (q - 1.0).abs() < 1e-12 {
        let seq: Vec<(f64, f64)> = (1..=m.max_depth)
            .map(|n| {
                let lv = m.level(n);
                let h: f64 = lv
                    .mass
                    .iter()
                    .map(|&p| if p > 0.0 { -p * p.log2() } else { 0.0 })
                    .sum();
                (n as f64, h / n as f64)
            })
            .collect();
        return tail_estimate(&seq).value;
    }
    let table = MomentTable::envelopes(m, r);
    (table.scaling_hat(q) + q * r) / (1.0 - q)
}

/// Entropy dimension estimate via central differences of beta_hat at 1.
#[derive(Debug, Clone)]
pub struct DZero {
    /// The delta/2 refinement (the reported value).
    pub value: f64,
    /// The coarse delta = 1e-3 difference.
    pub coarse: f64,
    /// Set when the two differ by more than 1e-3.
    pub flagged: bool,
}

/// D_0 = -beta'(1), by central difference at delta = 1e-3 with a delta/2
/// refinement; disagreement beyond 1e-3 is flagged.
pub fn d_zero(m: &DyadicMeasure) -> DZero {
    let table = MomentTable::masses(m);
    let diff = |delta: f64| -> f64 {
        let hi = table.scaling_hat(1.0 + delta);
        let lo = table.scaling_hat(1.0 - delta);
        -(hi - lo) / (2.0 * delta)
    };
    let coarse = diff(1e-3);
    let fine = diff(5e-4);
    DZero {
        value: fine,
        coarse,
        flagged: (fine - coarse).abs() > 1e-3,
    }
}

/// Supremum of critical exponents over an order grid and the implied
/// boundary value of the dimension at the lowest admissible order.
#[derive(Debug, Clone)]
pub struct BoundaryLimit {
    /// max of q_r over the grid entries that admit a critical exponent.
    pub a_nu: f64,
    /// a_nu/(a_nu - 1) * dim_infty, collapsing to dim_infty itself when
    /// a_nu exceeds 1e6 (the quotient is then 1 to working precision).
    pub limit_dim: f64,
    pub capped: bool,
    pub per_r: Vec<(f64, f64)>,
    /// Grid entries rejected by the order precondition.
    pub skipped: Vec<f64>,
    pub dim_infty: f64,
}

pub fn boundary_limit(m: &DyadicMeasure, r_grid: &[f64]) -> Result<BoundaryLimit, QdimError> {
    let est = dim_infty_estimate(m)?;
    let mut per_r = Vec::new();
    let mut skipped = Vec::new();
    let mut last_err = None;
    for &r in r_grid {
        match critical_q(m, r, "") {
            Ok(c) => per_r.push((r, c.q_r)),
            Err(e) => {
                skipped.push(r);
                last_err = Some(e);
            }
        }
    }
    if per_r.is_empty() {
        return Err(last_err.unwrap_or(QdimError::InvalidSpec(
            "empty order grid".into(),
        )));
    }
    let a_nu = per_r.iter().map(|&(_, q)| q).fold(f64::NEG_INFINITY, f64::max);
    let capped = a_nu > 1e6;
    let limit_dim = if capped {
        est.value
    } else {
        a_nu / (a_nu - 1.0) * est.value
    };
    Ok(BoundaryLimit {
        a_nu,
        limit_dim,
        capped,
        per_r,
        skipped,
        dim_infty: est.value,
    })
}

/// Stability diagnostics of the envelope scaling around the critical
/// exponent: per-level spread over the deepest half and the one-sided
/// derivative gap of the extrapolated scaling.
#[derive(Debug, Clone)]
pub struct PfRegularityReport {
    pub q_r: f64,
    /// (q, spread of tau_n(q) over the deepest half of the levels).
    pub spreads: Vec<(f64, f64)>,
    /// Right minus left difference quotient of tau_hat at q_r.
    pub derivative_gap: f64,
    /// Set when every sampled spread is at most 1e-3: the per-level
    /// scalings have settled and the extrapolation is trustworthy.
    pub settled: bool,
    /// Present when the critical exponent collapses to an endpoint edge
    /// (e.g. a single-atom target at positive order pins q_r = 0).
    pub note: Option<String>,
}

pub fn pf_regularity_report(
    m: &DyadicMeasure,
    r: f64,
) -> Result<PfRegularityReport, QdimError> {
    let table = MomentTable::envelopes(m, r);
    let (q_r, mut note) = match critical_q(m, r, "") {
        Ok(c) => (c.q_r, None),
        Err(QdimError::NoCrossing { lo, hi, .. }) if hi - lo < 1e-3 => (
            0.5 * (lo + hi),
            Some("degenerate bracket: critical exponent pinned at its endpoint".to_string()),
        ),
        Err(e) => return Err(e),
    };
    if note.is_none() && r > 0.0 && q_r.abs() <= 1e-3 {
        note = Some(
            "critical exponent at the zero edge: the moment spectrum is degenerate".to_string(),
        );
    }
    let h = 1e-2;
    let mut spreads = Vec::new();
    for k in -2i32..=2 {
        let q = (q_r + h * k as f64).max(0.0);
        let seq: Vec<(f64, f64)> = (1..=table.max_level())
            .map(|n| (n as f64, table.scaling(q, n)))
            .collect();
        let window = deep_half(&seq);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(_, v) in window {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        spreads.push((q, hi - lo));
    }
    let f = |q: f64| table.scaling_hat(q);
    let derivative_gap = ((f(q_r + h) - f(q_r)) / h) - ((f(q_r) - f(q_r - h)) / h);
    let settled = spreads.iter().all(|&(_, s)| s <= 1e-3);
    Ok(PfRegularityReport {
        q_r,
        spreads,
        derivative_gap,
        settled,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::build_measure;
    use crate::types::{MeasureKind, MeasureSpec};

    fn cascade(d: u32, offsets: Vec<Vec<f64>>, probs: Vec<f64>, depth: u32) -> DyadicMeasure {
        build_measure(
            &MeasureSpec {
                d,
                kind: MeasureKind::Ifs {
                    offsets,
                    probabilities: probs,
                },
            },
            depth,
            1e-12,
        )
        .unwrap()
    }

    fn menger(depth: u32) -> DyadicMeasure {
        cascade(
            3,
            vec![
                vec![0.0, 0.0, 0.0],
                vec![0.5, 0.0, 0.0],
                vec![0.0, 0.5, 0.0],
                vec![0.0, 0.0, 0.5],
            ],
            vec![0.66, 0.2, 0.08, 0.06],
            depth,
        )
    }

    fn uniform_1d(depth: u32) -> DyadicMeasure {
        build_measure(
            &MeasureSpec {
                d: 1,
                kind: MeasureKind::Density {
                    name: "uniform".into(),
                },
            },
            depth,
            1e-12,
        )
        .unwrap()
    }

    /// Independent oracle: for a product cascade, sum nu^q over level n is
    /// exactly (sum p_i^q)^n, so beta_n(q) = log2(sum p_i^q) at every level.
    fn cascade_beta_oracle(probs: &[f64], q: f64) -> f64 {
        probs.iter().map(|p| p.powf(q)).sum::<f64>().log2()
    }

    #[test]
    fn cascade_beta_matches_closed_form_at_every_level() {
        let m = menger(6);
        let probs = [0.66, 0.2, 0.08, 0.06];
        for &q in &[0.0, 0.5, 1.0, 1.87, 2.5] {
            let want = cascade_beta_oracle(&probs, q);
            for n in 1..=6 {
                let got = beta_n(&m, q, n);
                assert!(
                    (got - want).abs() < 1e-12,
                    "q={q} n={n}: got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn beta_at_one_is_zero_and_zero_counts_cubes() {
        let m = menger(5);
        assert!(beta_n(&m, 1.0, 5).abs() < 1e-12);
        // q = 0 counts positive cubes: 4^n of them, log2 / n = 2.
        assert!((beta_n(&m, 0.0, 5) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_attained_at_own_cube_when_factor_below_one() {
        // For this cascade at r = -0.5 every one-step factor p_i 2^{-r}
        // stays below 1, so J(Q) is nu(Q) 4^{... } at Q itself: tau_n must
        // equal beta_n - q r exactly, so no truncation sensitivity.
        let m = menger(6);
        let r = -0.5;
        let t = tau_n(&m, r, 1.3, 4);
        assert!(
            (t.value - t.own_only_value).abs() < 1e-12,
            "value {} vs own {}",
            t.value,
            t.own_only_value
        );
        assert!(!t.truncation_sensitive);
        assert!(!t.low_order_warning);
    }

    #[test]
    fn envelope_becomes_truncation_sensitive_below_scaling_threshold() {
        // p_max 2^{-r} > 1 once r < log2(p_max) = -0.599...: descendants
        // dominate and J keeps moving with depth.
        let m = menger(8);
        let t = tau_n(&m, -0.8, 1.1, 4);
        assert!(t.truncation_sensitive);
        assert!(t.low_order_warning);
    }

    #[test]
    fn j_value_by_descent_agrees_with_envelope_table() {
        let m = menger(5);
        for &r in &[-0.8, -0.5, 0.0, 1.0] {
            let table = MomentTable::envelopes(&m, r);
            // Compare the level-2 moment from the table against a direct
            // enumeration via j_value.
            let lv = m.level(2);
            let q = 1.7;
            let direct: f64 = lv
                .keys
                .iter()
                .map(|&k| {
                    let cube = m.cube_of(2, k);
                    j_value(&m, r, &cube).unwrap().powf(q)
                })
                .sum();
            let got = table.level(2).log2_moment(q);
            assert!(
                (got - direct.log2()).abs() < 1e-10,
                "r={r}: table {got} vs direct {}",
                direct.log2()
            );
        }
    }

    #[test]
    fn tau_dominates_beta_minus_qr() {
        let m = menger(6);
        for &r in &[-0.5, -0.2, 0.7] {
            let table = MomentTable::envelopes(&m, r);
            for &q in &[0.3, 1.0, 1.9] {
                for n in 1..=6 {
                    let tau = table.scaling(q, n);
                    let beta = beta_n(&m, q, n);
                    assert!(
                        tau >= beta - q * r - 1e-12,
                        "r={r} q={q} n={n}: tau {tau} < beta - qr {}",
                        beta - q * r
                    );
                }
            }
        }
    }

    #[test]
    fn uniform_critical_exponent_pins_two_at_minus_half() {
        // For the uniform law tau(q) = 1 - q(1 + r) exactly, so at
        // r = -1/2 the root is q = 2 and both bracket ends coincide there.
        let m = uniform_1d(10);
        let c = critical_q(&m, -0.5, "").unwrap();
        assert!((c.bracket.0 - 2.0).abs() < 1e-9, "bracket {:?}", c.bracket);
        assert!((c.bracket.1 - 2.0).abs() < 1e-9, "bracket {:?}", c.bracket);
        assert!((c.q_r - 2.0).abs() < 2e-6, "q_r = {}", c.q_r);
        // D_r = r q/(1-q) = 1.
        assert!((c.d_r - 1.0).abs() < 1e-4);
    }

    #[test]
    fn uniform_positive_order_root_sits_at_upper_bound() {
        // r = 1: root of 1 - 2q at q = 1/2 = dim_M/(dim_M + r).
        let m = uniform_1d(10);
        let c = critical_q(&m, 1.0, "").unwrap();
        assert!((c.q_r - 0.5).abs() < 2e-6);
        assert!((c.d_r - 1.0).abs() < 1e-4);
    }

    #[test]
    fn qr_bounds_match_published_examples() {
        // Coinciding dimension estimates at r = -1/2 pin the bracket at 2.
        let (lo, hi) = qr_bounds(1.0, 1.0, -0.5).unwrap();
        assert!((lo - 2.0).abs() < 1e-12 && (hi - 2.0).abs() < 1e-12);
        // Spread estimates: (1.3333, 15.08) at r = -1/2.
        let (lo, hi) = qr_bounds(2.0, 0.5995, -0.5).unwrap();
        assert!((lo - 4.0 / 3.0).abs() < 1e-9);
        assert!((hi - (1.0 + (2.0 - 0.5995) / (0.5995 - 0.5))).abs() < 1e-9);
        assert!(hi > 15.0 && hi < 15.2);
        // Positive order.
        let (lo, hi) = qr_bounds(1.0, 1.0, 1.0).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - 0.5).abs() < 1e-12);
        // Order zero pins q = 1.
        assert_eq!(qr_bounds(2.0, 0.6, 0.0).unwrap(), (1.0, 1.0));
        // Below the admissible range the bracket is rejected.
        assert!(qr_bounds(2.0, 0.5, -0.6).is_err());
    }

    #[test]
    fn critical_q_rejects_low_orders_and_shallow_trees() {
        let m = menger(8);
        assert!(matches!(
            critical_q(&m, -0.7, ""),
            Err(QdimError::Divergent { .. })
        ));
        let shallow = menger(5);
        assert!(critical_q(&shallow, -0.5, "").is_err());
        assert!(matches!(
            critical_q(&m, -0.5, "other/protocol"),
            Err(QdimError::Unsupported(_))
        ));
    }

    #[test]
    fn renyi_limits_match_entropy_and_identity() {
        // Uniform law: renyi(q) = 1 for every q (all moments scale alike).
        let m = uniform_1d(10);
        assert!((renyi(&m, 0.0, 2.0) - 1.0).abs() < 1e-9);
        assert!((renyi(&m, 0.0, 1.0) - 1.0).abs() < 1e-9);
        // At the critical exponent the value equals r q/(1-q).
        let c = critical_q(&m, -0.5, "").unwrap();
        let v = renyi(&m, -0.5, c.q_r);
        assert!((v - (-0.5) * c.q_r / (1.0 - c.q_r)).abs() < 1e-3);
    }

    #[test]
    fn d_zero_recovers_cascade_entropy() {
        // D_0 = sum p log2(1/p) for a cascade.
        let m = cascade(
            1,
            vec![vec![0.0], vec![0.5]],
            vec![0.3, 0.7],
            10,
        );
        let want = -(0.3f64 * 0.3f64.log2() + 0.7 * 0.7f64.log2());
        let d = d_zero(&m);
        assert!((d.value - want).abs() < 1e-6, "got {}, want {want}", d.value);
        assert!(!d.flagged);
    }

    #[test]
    fn degenerate_atom_report_pins_zero_edge_without_crash() {
        let m = build_measure(
            &MeasureSpec {
                d: 1,
                kind: MeasureKind::Atomic {
                    points: vec![vec![0.37]],
                    weights: vec![1.0],
                },
            },
            10,
            1e-12,
        )
        .unwrap();
        let rep = pf_regularity_report(&m, 0.5).unwrap();
        assert!(rep.q_r.abs() < 1e-3, "q_r = {}", rep.q_r);
        assert!(rep.note.is_some());
    }

    #[test]
    fn boundary_limit_caps_huge_exponents() {
        let m = uniform_1d(9);
        // For the uniform law q_r = 1/(1+r): r close to -1 blows q_r up.
        let b = boundary_limit(&m, &[-0.5, -0.9, -0.99]).unwrap();
        assert!(b.a_nu > 90.0, "a_nu = {}", b.a_nu);
        assert!(!b.capped);
        // limit = a/(a-1) * dim_infty: close to 1 for the uniform law.
        assert!((b.limit_dim - 1.0).abs() < 0.02);
        assert!(b.skipped.is_empty());
    }

    #[test]
    fn convexity_of_level_scalings() {
        // log2 moment sums are convex in q; second differences at fixed n
        // stay nonnegative up to rounding.
        let m = menger(6);
        let table = MomentTable::envelopes(&m, -0.5);
        for n in 2..=6 {
            let g = |q: f64| table.level(n).log2_moment(q);
            for k in 0..20 {
                let q = 0.2 + 0.15 * k as f64;
                let second = g(q + 0.1) - 2.0 * g(q) + g(q - 0.1);
                assert!(second >= -1e-9, "n={n} q={q}: {second}");
            }
        }
    }
}
