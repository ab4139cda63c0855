//! Small numerical toolbox: compensated summation, least squares,
//! bracketed root finding, golden-section optimization, and the shared
//! tail-extrapolation rule for per-level sequences.

/// Neumaier-compensated sum; accurate to a few ulps independent of length.
///
/// Non-finite terms bypass the compensation (which would turn them into
/// NaN via inf - inf) and combine by plain IEEE addition instead.
pub fn comp_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    let mut nonfinite = 0.0f64;
    let mut seen_nonfinite = false;
    for x in xs {
        if !x.is_finite() {
            nonfinite = if seen_nonfinite { nonfinite + x } else { x };
            seen_nonfinite = true;
            continue;
        }
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    if seen_nonfinite {
        nonfinite
    } else {
        s + c
    }
}

/// log(sum exp(a_i) * w_i) with positive weights, stable for widely spread `a`.
pub fn log_sum_exp_weighted(terms: &[(f64, f64)]) -> f64 {
    let m = terms
        .iter()
        .filter(|(a, w)| *w > 0.0 && a.is_finite())
        .map(|(a, _)| *a)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s = comp_sum(
        terms
            .iter()
            .filter(|(a, w)| *w > 0.0 && a.is_finite())
            .map(|(a, w)| w * (a - m).exp()),
    );
    m + s.ln()
}

/// Ordinary least squares `y = slope * x + intercept`.
///
/// Requires at least two distinct abscissae; degenerate input returns
/// slope 0 and the mean as intercept.
pub fn lsq(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    if points.is_empty() {
        return (0.0, 0.0);
    }
    let mx = comp_sum(points.iter().map(|p| p.0)) / n;
    let my = comp_sum(points.iter().map(|p| p.1)) / n;
    let sxx = comp_sum(points.iter().map(|p| (p.0 - mx) * (p.0 - mx)));
    if sxx == 0.0 {
        return (0.0, my);
    }
    let sxy = comp_sum(points.iter().map(|p| (p.0 - mx) * (p.1 - my)));
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// The deepest `ceil(len/2)` entries of a per-level slice.
pub fn deep_half<T>(xs: &[T]) -> &[T] {
    let keep = xs.len().div_ceil(2);
    &xs[xs.len() - keep..]
}

/// Limit estimate for a sequence indexed by level `n`, protocol
/// [`crate::types::TAIL_RULE`]: the larger of the deepest value and the
/// least-squares intercept of value against `1/n` over the deepest half.
#[derive(Debug, Clone, Copy)]
pub struct TailEstimate {
    pub value: f64,
    pub last: f64,
    pub intercept: f64,
}

/// `seq` holds `(n, value)` pairs in increasing `n`.
pub fn tail_estimate(seq: &[(f64, f64)]) -> TailEstimate {
    assert!(!seq.is_empty(), "tail_estimate needs at least one level");
    let last = seq[seq.len() - 1].1;
    let window = deep_half(seq);
    let pts: Vec<(f64, f64)> = window.iter().map(|&(n, v)| (1.0 / n, v)).collect();
    let (_, intercept) = lsq(&pts);
    TailEstimate {
        value: last.max(intercept),
        last,
        intercept,
    }
}

/// Slope estimate over the deepest half of `(n, value)` pairs, protocol
/// [`crate::types::SLOPE_RULE`].
pub fn deep_half_slope(seq: &[(f64, f64)]) -> f64 {
    lsq(deep_half(seq)).0
}

/// Bisection for a root of `f` on `[lo, hi]`.
///
/// The caller guarantees `f(lo)` and `f(hi)` have opposite signs (zero at an
/// endpoint returns that endpoint). Converges to `|hi - lo| <= tol`.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return lo;
    }
    if f_hi == 0.0 {
        return hi;
    }
    debug_assert!(f_lo * f_hi < 0.0, "bisect requires a sign change");
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if f_lo * f_mid < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            f_lo = f_mid;
        }
    }
    0.5 * (lo + hi)
}

/// Golden-section minimizer of a unimodal `f` on `[a, b]`; returns `(x, f(x))`.
pub fn golden_min<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    (x, fx)
}

/// Golden-section maximizer; returns `(x, f(x))`.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let (x, neg) = golden_min(|t| -f(t), a, b, tol);
    (x, -neg)
}

/// ln(k!) for k = 0..=n as a table (exact accumulation of ln k).
pub fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0f64;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_beats_naive_on_adversarial_input() {
        // 1 followed by 1e8 copies of 1e-16 sums to 1 + 1e-8 exactly in
        // compensated arithmetic, while the naive loop loses every term.
        let n = 100_000_000usize;
        let s = comp_sum(std::iter::once(1.0).chain(std::iter::repeat(1e-16).take(n)));
        assert!((s - (1.0 + 1e-8)).abs() < 1e-15, "got {s}");
    }

    #[test]
    fn lsq_recovers_exact_line() {
        let pts: Vec<(f64, f64)> = (1..=9).map(|i| (i as f64, 3.5 * i as f64 - 2.0)).collect();
        let (m, b) = lsq(&pts);
        assert!((m - 3.5).abs() < 1e-12);
        assert!((b + 2.0).abs() < 1e-12);
    }

    #[test]
    fn tail_estimate_recovers_limit_of_one_over_n_decay() {
        // v_n = 2 - 3/n has limit 2; the rule's intercept fit is exact here.
        let seq: Vec<(f64, f64)> = (1..=12).map(|n| (n as f64, 2.0 - 3.0 / n as f64)).collect();
        let est = tail_estimate(&seq);
        assert!((est.value - 2.0).abs() < 1e-9, "got {}", est.value);
        assert!(est.last < est.value);
    }

    #[test]
    fn deep_half_takes_ceil_of_len() {
        assert_eq!(deep_half(&[1, 2, 3, 4, 5]), &[3, 4, 5]);
        assert_eq!(deep_half(&[1, 2, 3, 4]), &[3, 4]);
    }

    #[test]
    fn bisect_finds_interior_and_endpoint_roots() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-12);
        assert!((r - std::f64::consts::SQRT_2).abs() < 1e-10);
        assert_eq!(bisect(|x| x, 0.0, 1.0, 1e-12), 0.0);
    }

    #[test]
    fn golden_section_locates_quartic_minimum() {
        // Pure quartic: values near the minimum stay resolvable, so the
        // bracket converges all the way down.
        let (x, fx) = golden_min(|t| (t - 0.3).powi(4), -1.0, 1.0, 1e-9);
        assert!((x - 0.3).abs() < 1e-4);
        assert!(fx < 1e-14);
        // Offset quadratic: the f64 plateau around the minimum has width
        // ~sqrt(eps), which bounds the attainable argument accuracy.
        let (x, fx) = golden_min(|t| (t - 0.3).powi(2) + 1.0, -1.0, 1.0, 1e-9);
        assert!((x - 0.3).abs() < 1e-6);
        assert!((fx - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_handles_extreme_spread() {
        // exp(-2000) vanishes next to exp(10); the log-sum must not underflow.
        let v = log_sum_exp_weighted(&[(-2000.0, 1.0), (10.0, 2.0)]);
        assert!((v - (10.0 + 2.0f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn ln_factorial_table_matches_direct_products() {
        let t = ln_factorials(20);
        assert_eq!(t[0], 0.0);
        let direct: f64 = (1..=20).map(|k| k as f64).product::<f64>().ln();
        assert!((t[20] - direct).abs() < 1e-9);
    }
}
