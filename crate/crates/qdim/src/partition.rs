//! Optimal dyadic partitions for envelope values of one order.
//!
//! A partition here is a finite antichain of dyadic cubes covering the unit
//! cube. Its figure of merit at order r is gamma = max over cubes Q of
//! J(Q), the envelope value nu(Q') side(Q')^r maximized over stored
//! descendants Q' of Q. Splitting the cube with the largest J first is
//! optimal: to beat the current max every cube with J at least that value
//! must be split, and the cardinality of that threshold set does not depend
//! on the order of splits. The module provides the greedy chain under a
//! cardinality budget, the dual stopping form (split until max J drops
//! below a target), coarse counting of large-envelope cubes per level, an
//! exhaustive subtree dynamic program as an independent optimality check,
//! and closed-form fast paths for product cascades where counts at depths
//! far beyond any stored tree come from symbol-count lattices.
//!
//! Cardinality counts positive-mass cubes only. Zero-mass cubes are still
//! carried in the partition (the covering invariant needs them: the cube
//! volumes must sum to 1) but contribute J = 0 and never bind the max.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::collections::HashMap;

use crate::dyadic::{child_offset_key, unpack_key, validate_probabilities, DyadicMeasure};
use crate::numerics::{deep_half, ln_factorials, log_sum_exp_weighted};
use crate::spectra::envelope_arrays;
use crate::types::{CubeIndex, QdimError};

/// One cube of a partition with its envelope value and mass.
#[derive(Debug, Clone)]
pub struct PartitionCube {
    pub cube: CubeIndex,
    pub j: f64,
    pub mass: f64,
}

/// A covering antichain of dyadic cubes.
#[derive(Debug, Clone)]
pub struct Partition {
    /// Every cube of the antichain, zero-mass covers included.
    pub cubes: Vec<PartitionCube>,
    /// Number of positive-mass cubes.
    pub cardinality: usize,
    /// Largest envelope value over the cubes (gamma of the partition).
    pub max_j: f64,
    /// Order the envelope was computed at.
    pub r: f64,
    /// True when a split was refused because the top cube sits at the
    /// stored tree's maximum depth.
    pub depth_limited: bool,
}

impl Partition {
    /// Sum of cube volumes; exactly 1 for a genuine covering antichain.
    pub fn volume(&self) -> f64 {
        self.cubes
            .iter()
            .map(|c| 2f64.powi(-((c.cube.level * c.cube.d()) as i32)))
            .sum()
    }
}

/// Heap entry ordered by (J desc, level asc, lexicographic coords asc).
#[derive(Debug, Clone, Copy)]
struct Entry {
    j: f64,
    level: u32,
    lex: u64,
    key: u64,
    mass: f64,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.j
            .total_cmp(&other.j)
            .then(other.level.cmp(&self.level))
            .then(other.lex.cmp(&self.lex))
    }
}

/// Packs coordinates with axis 0 most significant, so u64 order equals
/// lexicographic order on the coordinate vector.
fn lex_key(key: u64, d: u32, stride: u32) -> u64 {
    let coords = unpack_key(key, d, stride);
    let mut out = 0u64;
    for (i, &c) in coords.iter().enumerate() {
        out |= c << ((d as usize - 1 - i) as u32 * stride);
    }
    out
}

/// Positive children (level index position included) and zero-mass child
/// keys of one stored cube.
fn split_children(
    m: &DyadicMeasure,
    level: u32,
    key: u64,
) -> (Vec<(u64, usize)>, Vec<u64>) {
    let stride = m.stride();
    let next = m.level(level + 1);
    let mut pos = Vec::new();
    let mut zero = Vec::new();
    for branch in 0..(1u32 << m.d) {
        let ck = 2 * key + child_offset_key(branch, m.d, stride);
        match next.find(ck) {
            Some(i) => pos.push((ck, i)),
            None => zero.push(ck),
        }
    }
    (pos, zero)
}

struct GreedyState {
    heap: BinaryHeap<Entry>,
    covers: Vec<(u32, u64)>,
    cardinality: usize,
    depth_limited: bool,
}

impl GreedyState {
    fn start(m: &DyadicMeasure, env: &[Vec<f64>]) -> Self {
        let mut heap = BinaryHeap::new();
        heap.push(Entry {
            j: env[0][0],
            level: 0,
            lex: 0,
            key: 0,
            mass: m.level(0).mass[0],
        });
        GreedyState {
            heap,
            covers: Vec::new(),
            cardinality: 1,
            depth_limited: false,
        }
    }

    fn top(&self) -> Entry {
        *self.heap.peek().expect("greedy heap never drains")
    }

    /// Splits the top cube unconditionally (caller has checked budget and
    /// depth), updating cardinality and the zero-mass cover list.
    fn split_top(&mut self, m: &DyadicMeasure, env: &[Vec<f64>]) {
        let top = self.heap.pop().expect("greedy heap never drains");
        let (pos, zero) = split_children(m, top.level, top.key);
        let stride = m.stride();
        let child_level = top.level + 1;
        for ck in zero {
            self.covers.push((child_level, ck));
        }
        for (ck, i) in &pos {
            self.heap.push(Entry {
                j: env[child_level as usize][*i],
                level: child_level,
                lex: lex_key(*ck, m.d, stride),
                key: *ck,
                mass: m.level(child_level).mass[*i],
            });
        }
        self.cardinality = self.cardinality - 1 + pos.len();
    }

    /// Cardinality after a hypothetical split of the top cube.
    fn card_after_split(&self, m: &DyadicMeasure) -> usize {
        let top = self.top();
        let (pos, _) = split_children(m, top.level, top.key);
        self.cardinality - 1 + pos.len()
    }

    fn finish(self, m: &DyadicMeasure, r: f64) -> Partition {
        let max_j = self.top().j;
        let cardinality = self.cardinality;
        let depth_limited = self.depth_limited;
        let mut cubes: Vec<PartitionCube> = self
            .heap
            .into_iter()
            .map(|e| PartitionCube {
                cube: m.cube_of(e.level, e.key),
                j: e.j,
                mass: e.mass,
            })
            .collect();
        for (level, key) in self.covers {
            cubes.push(PartitionCube {
                cube: m.cube_of(level, key),
                j: 0.0,
                mass: 0.0,
            });
        }
        Partition {
            cubes,
            cardinality,
            max_j,
            r,
            depth_limited,
        }
    }
}

/// Greedy optimal partition under a cardinality budget: keep splitting the
/// cube with the largest envelope value while the positive-cube count stays
/// within the budget and the cube is above the stored depth floor.
pub fn greedy_partition(
    m: &DyadicMeasure,
    r: f64,
    budget: usize,
) -> Result<Partition, QdimError> {
    if budget == 0 {
        return Err(QdimError::InvalidSpec(
            "partition budget must be at least 1".into(),
        ));
    }
    let env = envelope_arrays(m, r);
    let mut state = GreedyState::start(m, &env);
    loop {
        let top = state.top();
        if top.level == m.max_depth {
            state.depth_limited = true;
            break;
        }
        if state.card_after_split(m) > budget {
            break;
        }
        state.split_top(m, &env);
    }
    Ok(state.finish(m, r))
}

/// Result of the stopping form: the partition reaching max J < 1/x.
#[derive(Debug, Clone)]
pub struct PartitionEntropy {
    /// Positive-cube cardinality of the stopping partition, M(x).
    pub m_of_x: u64,
    pub max_j: f64,
    pub partition: Partition,
}

/// Splits until the largest envelope value drops strictly below 1/x.
/// Fails with the best reached value when the stored depth runs out first.
pub fn partition_entropy(
    m: &DyadicMeasure,
    r: f64,
    x: f64,
) -> Result<PartitionEntropy, QdimError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(QdimError::InvalidSpec(
            "partition entropy argument must be positive and finite".into(),
        ));
    }
    let target = 1.0 / x;
    let env = envelope_arrays(m, r);
    let mut state = GreedyState::start(m, &env);
    while state.top().j >= target {
        if state.top().level == m.max_depth {
            return Err(QdimError::DepthExhausted {
                max_depth: m.max_depth,
                best: state.top().j,
            });
        }
        state.split_top(m, &env);
    }
    let partition = state.finish(m, r);
    Ok(PartitionEntropy {
        m_of_x: partition.cardinality as u64,
        max_j: partition.max_j,
        partition,
    })
}

/// Per-level counts of cubes whose envelope value reaches 2^(-alpha n),
/// with the coarse spectrum bounds taken over the deepest half of the
/// requested levels.
#[derive(Debug, Clone)]
pub struct CoarseCounts {
    pub alpha: f64,
    pub per_level: Vec<(u32, u64)>,
    /// max over the deep half of log2^+(count)/n.
    pub f_upper: f64,
    /// min over the deep half of log2^+(count)/n.
    pub f_lower: f64,
}

fn coarse_bounds(per_level: &[(u32, f64)]) -> (f64, f64) {
    let deep = deep_half(per_level);
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    for &(n, log2_count) in deep {
        let v = log2_count.max(0.0) / n as f64;
        hi = hi.max(v);
        lo = lo.min(v);
    }
    (hi, lo)
}

/// Exact per-level counts of stored cubes with J(Q) >= 2^(-alpha n).
pub fn coarse_counts(
    m: &DyadicMeasure,
    r: f64,
    alpha: f64,
    levels: &[u32],
) -> Result<CoarseCounts, QdimError> {
    let mut levels: Vec<u32> = levels.to_vec();
    levels.sort_unstable();
    levels.dedup();
    if levels.is_empty() || levels[0] == 0 || levels[levels.len() - 1] > m.max_depth {
        return Err(QdimError::InvalidSpec(
            "coarse count levels must be within 1..=max_depth".into(),
        ));
    }
    let env = envelope_arrays(m, r);
    let per_level: Vec<(u32, u64)> = levels
        .iter()
        .map(|&n| {
            let thr = 2f64.powf(-alpha * n as f64);
            let count = env[n as usize].iter().filter(|&&j| j >= thr).count() as u64;
            (n, count)
        })
        .collect();
    let logs: Vec<(u32, f64)> = per_level
        .iter()
        .map(|&(n, c)| (n, (c.max(1) as f64).log2()))
        .collect();
    let (f_upper, f_lower) = coarse_bounds(&logs);
    Ok(CoarseCounts {
        alpha,
        per_level,
        f_upper,
        f_lower,
    })
}

/// The coarse-dimension objective maximized over a grid of alpha values.
#[derive(Debug, Clone)]
pub struct OptimizedCoarse {
    /// sup over the grid of F_upper(alpha)/alpha.
    pub f_upper: f64,
    /// sup over the grid of F_lower(alpha)/alpha.
    pub f_lower: f64,
    /// Argmax of the upper objective.
    pub best_alpha: f64,
    /// (alpha, F_upper(alpha)/alpha, F_lower(alpha)/alpha) per grid point.
    pub per_alpha: Vec<(f64, f64, f64)>,
}

fn optimize_per_alpha(per_alpha: Vec<(f64, f64, f64)>) -> OptimizedCoarse {
    let (best_alpha, f_upper, _) = per_alpha
        .iter()
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty alpha grid");
    let f_lower = per_alpha
        .iter()
        .map(|t| t.2)
        .fold(f64::NEG_INFINITY, f64::max);
    OptimizedCoarse {
        f_upper,
        f_lower,
        best_alpha,
        per_alpha,
    }
}

pub fn optimized_coarse_dimension(
    m: &DyadicMeasure,
    r: f64,
    alpha_grid: &[f64],
    levels: &[u32],
) -> Result<OptimizedCoarse, QdimError> {
    if alpha_grid.is_empty() {
        return Err(QdimError::InvalidSpec("empty alpha grid".into()));
    }
    let mut per_alpha = Vec::with_capacity(alpha_grid.len());
    for &alpha in alpha_grid {
        if !(alpha > 0.0) {
            return Err(QdimError::InvalidSpec(
                "coarse alpha grid must be positive".into(),
            ));
        }
        let c = coarse_counts(m, r, alpha, levels)?;
        per_alpha.push((alpha, c.f_upper / alpha, c.f_lower / alpha));
    }
    Ok(optimize_per_alpha(per_alpha))
}

/// Closed-form partition statistics for a product cascade at one order.
///
/// For an IFS with branch probabilities p_i the envelope value of the word
/// w is the product over its symbols of f_i = p_i 2^(-r), provided every
/// factor is below 1 (otherwise the envelope grows along descents and the
/// symbolic shortcuts here do not apply). Word statistics then depend only
/// on the symbol-count vector, so counts at depths far beyond any stored
/// tree reduce to sums over a small lattice.
#[derive(Debug, Clone)]
pub struct CascadeEnvelope {
    /// -ln f_i per branch, all positive.
    lambdas: Vec<f64>,
    arity: usize,
}

/// Word counts are memoized on the symbol-count vector.
type CountKey = Vec<u16>;

impl CascadeEnvelope {
    pub fn new(probabilities: &[f64], r: f64) -> Result<Self, QdimError> {
        validate_probabilities(probabilities)?;
        let scale = 2f64.powf(-r);
        let mut lambdas = Vec::new();
        for &p in probabilities {
            if p == 0.0 {
                continue;
            }
            let f = p * scale;
            if f >= 1.0 {
                return Err(QdimError::Unsupported(format!(
                    "cascade envelope factor {f} >= 1; symbolic counts need \
                     every p_i 2^(-r) below 1"
                )));
            }
            lambdas.push(-f.ln());
        }
        if lambdas.len() < 2 {
            return Err(QdimError::Unsupported(
                "cascade shortcuts need at least two positive branches".into(),
            ));
        }
        Ok(CascadeEnvelope {
            arity: lambdas.len(),
            lambdas,
        })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    fn weight(&self, counts: &[u16]) -> f64 {
        counts
            .iter()
            .zip(&self.lambdas)
            .map(|(&k, &l)| k as f64 * l)
            .sum()
    }

    /// Positive-cube cardinality of the stopping partition with max J
    /// strictly below 1/x. A word is a leaf once the sum of its symbol
    /// weights exceeds ln x.
    pub fn stopping_count(&self, x: f64) -> u64 {
        if x <= 1.0 {
            return 1;
        }
        let ln_x = x.ln();
        let mut memo: HashMap<CountKey, u64> = HashMap::new();
        self.stopping_rec(&mut memo, vec![0; self.arity], 0.0, ln_x)
    }

    fn stopping_rec(
        &self,
        memo: &mut HashMap<CountKey, u64>,
        counts: CountKey,
        weight: f64,
        ln_x: f64,
    ) -> u64 {
        if weight > ln_x {
            return 1;
        }
        if let Some(&v) = memo.get(&counts) {
            return v;
        }
        let mut total = 0u64;
        for i in 0..self.arity {
            let mut next = counts.clone();
            next[i] += 1;
            total += self.stopping_rec(memo, next, weight + self.lambdas[i], ln_x);
        }
        memo.insert(counts, total);
        total
    }

    /// Number of words (any length, root included) with J > t, t in (0, 1].
    pub fn count_above(&self, t: f64) -> u64 {
        let bound = -t.ln();
        if !(bound > 0.0) {
            // Even the root fails J > t once t >= 1.
            return 0;
        }
        // paths(k) = number of words with symbol counts k; the region
        // weight(k) < bound is downward closed so the recursion stays in it.
        let mut paths: HashMap<CountKey, u64> = HashMap::new();
        let mut total = 0u64;
        let mut stack = vec![(vec![0u16; self.arity], 0.0f64)];
        let mut seen: HashMap<CountKey, ()> = HashMap::new();
        while let Some((counts, weight)) = stack.pop() {
            if seen.insert(counts.clone(), ()).is_some() {
                continue;
            }
            total += self.paths_of(&mut paths, &counts);
            for i in 0..self.arity {
                let w = weight + self.lambdas[i];
                if w < bound {
                    let mut next = counts.clone();
                    next[i] += 1;
                    stack.push((next, w));
                }
            }
        }
        total
    }

    fn paths_of(&self, memo: &mut HashMap<CountKey, u64>, counts: &CountKey) -> u64 {
        if counts.iter().all(|&k| k == 0) {
            return 1;
        }
        if let Some(&v) = memo.get(counts) {
            return v;
        }
        let mut total = 0u64;
        for i in 0..self.arity {
            if counts[i] > 0 {
                let mut prev = counts.clone();
                prev[i] -= 1;
                total += self.paths_of(memo, &prev);
            }
        }
        memo.insert(counts.clone(), total);
        total
    }

    /// The k-th largest envelope value over all words, by bisection on the
    /// threshold of `count_above` (values repeat with multiplicities; the
    /// returned value is accurate to about 1e-12 relative).
    pub fn kth_largest(&self, k: u64) -> f64 {
        assert!(k >= 1);
        if k == 1 {
            return 1.0;
        }
        // G(t) = count_above(t) is a decreasing step function with
        // G(1) = 0; walk lo down until G(exp(lo)) >= k, then bisect.
        let mut hi = 0.0f64;
        let mut lo = -1.0f64;
        while self.count_above(lo.exp()) < k {
            lo *= 2.0;
            assert!(lo > -1e4, "kth_largest threshold runaway");
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.count_above(mid.exp()) >= k {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        lo.exp()
    }

    /// Gamma of the greedy partition under a cardinality budget. Each split
    /// of the greedy chain replaces one word by its arity positive children,
    /// so s = (budget - 1)/(arity - 1) splits fit, and the resulting max is
    /// the (s+1)-th largest envelope value over all words.
    pub fn greedy_gamma(&self, budget: u64) -> f64 {
        assert!(budget >= 1);
        let s = (budget - 1) / (self.arity as u64 - 1);
        self.kth_largest(s + 1)
    }

    /// All (weight, ln multinomial) pairs over level-n symbol-count
    /// vectors. Counts at these depths overflow integers long before they
    /// overflow the exponent range, so multiplicities stay in ln form.
    fn level_weights(&self, n: u32, lnf: &[f64]) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut counts = vec![0u16; self.arity];
        self.compositions(&mut counts, 0, n as usize, lnf, &mut out);
        out
    }

    fn compositions(
        &self,
        counts: &mut Vec<u16>,
        pos: usize,
        remaining: usize,
        lnf: &[f64],
        out: &mut Vec<(f64, f64)>,
    ) {
        if pos + 1 == self.arity {
            counts[pos] = remaining as u16;
            let n = counts.iter().map(|&k| k as usize).sum::<usize>();
            let ln_multi: f64 =
                lnf[n] - counts.iter().map(|&k| lnf[k as usize]).sum::<f64>();
            out.push((self.weight(counts), ln_multi));
            counts[pos] = 0;
            return;
        }
        for k in 0..=remaining {
            counts[pos] = k as u16;
            self.compositions(counts, pos + 1, remaining - k, lnf, out);
            counts[pos] = 0;
        }
    }

    /// log2 of the number of level-n words with J >= 2^(-alpha n).
    pub fn coarse_log2_count(&self, alpha: f64, n: u32) -> f64 {
        let bound = alpha * n as f64 * std::f64::consts::LN_2;
        let lnf = ln_factorials(n as usize);
        let terms: Vec<(f64, f64)> = self
            .level_weights(n, &lnf)
            .into_iter()
            .filter(|&(w, _)| w <= bound)
            .map(|(_, ln_multi)| (ln_multi, 1.0))
            .collect();
        if terms.is_empty() {
            return f64::NEG_INFINITY;
        }
        log_sum_exp_weighted(&terms) / std::f64::consts::LN_2
    }

    /// Precomputed per-level tables answering coarse counts for any alpha
    /// by binary search: compositions are enumerated once per level, sorted
    /// by weight, and prefixed with running log-sums.
    pub fn coarse_table(&self, levels: &[u32]) -> CascadeCoarseTable {
        let max_n = levels.iter().copied().max().unwrap_or(0);
        let lnf = ln_factorials(max_n as usize);
        let levels_sorted = {
            let mut l: Vec<u32> = levels.to_vec();
            l.sort_unstable();
            l.dedup();
            l
        };
        let per_level = levels_sorted
            .iter()
            .map(|&n| {
                let mut entries = self.level_weights(n, &lnf);
                entries.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut prefix = Vec::with_capacity(entries.len());
                let mut acc = f64::NEG_INFINITY;
                for &(_, ln_multi) in &entries {
                    acc = ln_add(acc, ln_multi);
                    prefix.push(acc);
                }
                let weights = entries.into_iter().map(|(w, _)| w).collect();
                CoarseLevelTable { n, weights, prefix }
            })
            .collect();
        CascadeCoarseTable { levels: per_level }
    }
}

fn ln_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

struct CoarseLevelTable {
    n: u32,
    /// Sorted word weights (-ln J per symbol-count vector).
    weights: Vec<f64>,
    /// Running ln of the word count up to each weight.
    prefix: Vec<f64>,
}

impl CoarseLevelTable {
    /// ln of the number of level-n words with weight <= bound.
    fn ln_count(&self, bound: f64) -> f64 {
        let k = self.weights.partition_point(|&w| w <= bound);
        if k == 0 {
            f64::NEG_INFINITY
        } else {
            self.prefix[k - 1]
        }
    }
}

/// Coarse counting tables for a cascade over a fixed level set.
pub struct CascadeCoarseTable {
    levels: Vec<CoarseLevelTable>,
}

impl CascadeCoarseTable {
    /// log2 of the number of level-n words with J >= 2^(-alpha n), per
    /// level of the table.
    pub fn log2_counts(&self, alpha: f64) -> Vec<(u32, f64)> {
        self.levels
            .iter()
            .map(|t| {
                let bound = alpha * t.n as f64 * std::f64::consts::LN_2;
                (t.n, t.ln_count(bound) / std::f64::consts::LN_2)
            })
            .collect()
    }

    /// (F_upper(alpha), F_lower(alpha)) over the deepest half of the levels.
    pub fn coarse_bounds(&self, alpha: f64) -> (f64, f64) {
        coarse_bounds(&self.log2_counts(alpha))
    }

    /// Grid maximization of F_upper(alpha)/alpha and F_lower(alpha)/alpha.
    pub fn optimized(&self, alpha_grid: &[f64]) -> OptimizedCoarse {
        let per_alpha = alpha_grid
            .iter()
            .map(|&a| {
                let (up, lo) = self.coarse_bounds(a);
                (a, up / a, lo / a)
            })
            .collect();
        optimize_per_alpha(per_alpha)
    }
}

/// Exhaustive optimum over all covering antichains with at most `budget`
/// positive cubes, by dynamic programming over the stored subtree: either
/// keep a cube whole (J(Q) with one slot) or split it and allocate the
/// remaining budget among its positive children. Exponential-free but
/// only sized for small trees; used as an independent check of the greedy
/// chain.
pub fn exhaustive_gamma(
    m: &DyadicMeasure,
    r: f64,
    budget: usize,
) -> Result<f64, QdimError> {
    if budget == 0 {
        return Err(QdimError::InvalidSpec(
            "partition budget must be at least 1".into(),
        ));
    }
    let env = envelope_arrays(m, r);
    let mut memo: HashMap<(u32, u64, usize), f64> = HashMap::new();
    Ok(gamma_rec(m, &env, &mut memo, 0, 0, 0, budget))
}

fn gamma_rec(
    m: &DyadicMeasure,
    env: &[Vec<f64>],
    memo: &mut HashMap<(u32, u64, usize), f64>,
    level: u32,
    key: u64,
    idx: usize,
    budget: usize,
) -> f64 {
    let own = env[level as usize][idx];
    if level == m.max_depth {
        return own;
    }
    if let Some(&v) = memo.get(&(level, key, budget)) {
        return v;
    }
    let mut best = own;
    let (pos, _) = split_children(m, level, key);
    if !pos.is_empty() && budget >= pos.len() {
        best = best.min(alloc_rec(m, env, memo, level + 1, &pos, budget));
    }
    memo.insert((level, key, budget), best);
    best
}

/// Minimal max over allocations of `budget` slots (each child at least one)
/// to the children in `pos`.
fn alloc_rec(
    m: &DyadicMeasure,
    env: &[Vec<f64>],
    memo: &mut HashMap<(u32, u64, usize), f64>,
    level: u32,
    pos: &[(u64, usize)],
    budget: usize,
) -> f64 {
    let (ck, ci) = pos[0];
    if pos.len() == 1 {
        return gamma_rec(m, env, memo, level, ck, ci, budget);
    }
    let rest = &pos[1..];
    let mut best = f64::INFINITY;
    for b1 in 1..=(budget - rest.len()) {
        let first = gamma_rec(m, env, memo, level, ck, ci, b1);
        let others = alloc_rec(m, env, memo, level, rest, budget - b1);
        best = best.min(first.max(others));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::build_measure;
    use crate::types::{MeasureKind, MeasureSpec};

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

    fn uniform_1d() -> MeasureSpec {
        MeasureSpec {
            d: 1,
            kind: MeasureKind::Ifs {
                offsets: vec![vec![0.0], vec![0.5]],
                probabilities: vec![0.5, 0.5],
            },
        }
    }

    fn skew_1d(p: f64) -> MeasureSpec {
        MeasureSpec {
            d: 1,
            kind: MeasureKind::Ifs {
                offsets: vec![vec![0.0], vec![0.5]],
                probabilities: vec![p, 1.0 - p],
            },
        }
    }

    #[test]
    fn greedy_examples_pin_gamma_and_cardinality() {
        // Four mass-bearing level-1 cubes exhaust a budget of 4: the next
        // split would need 4 - 1 + 4 = 7 slots. Max J = 0.66 * 2^0.5.
        let m = build_measure(&menger_spec(), 6, 1e-11).unwrap();
        let part = greedy_partition(&m, -0.5, 4).unwrap();
        assert_eq!(part.cardinality, 4);
        assert!((part.max_j - 0.9334).abs() < 5e-5, "max_j = {}", part.max_j);
        assert!(!part.depth_limited);
        // Covering invariant: 4 positive + 4 zero-mass level-1 cubes.
        assert_eq!(part.cubes.len(), 8);
        assert!((part.volume() - 1.0).abs() < 1e-12);

        // Uniform d=1 at r=-0.5: J at level n is 2^(-n/2); a budget of 8
        // reaches the uniform level-3 partition with max 2^(-1.5).
        let u = build_measure(&uniform_1d(), 8, 1e-11).unwrap();
        let part = greedy_partition(&u, -0.5, 8).unwrap();
        assert_eq!(part.cardinality, 8);
        assert!((part.max_j - 2f64.powf(-1.5)).abs() < 1e-12);
    }

    #[test]
    fn greedy_budget_one_keeps_root() {
        let u = build_measure(&uniform_1d(), 4, 1e-11).unwrap();
        let part = greedy_partition(&u, -0.5, 1).unwrap();
        assert_eq!(part.cardinality, 1);
        assert_eq!(part.cubes.len(), 1);
        assert_eq!(part.max_j, 1.0);
    }

    #[test]
    fn greedy_flags_depth_exhaustion() {
        let u = build_measure(&uniform_1d(), 3, 1e-11).unwrap();
        let part = greedy_partition(&u, -0.5, 1_000).unwrap();
        assert!(part.depth_limited);
        assert_eq!(part.cardinality, 8);
        assert!((part.volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stopping_form_strict_inequality() {
        // Uniform d=1, r=-0.5: J = 2^(-n/2). At x = 2^1.5 the level-3
        // value equals the target exactly and must still be split, giving
        // the 16-cube level-4 partition.
        let u = build_measure(&uniform_1d(), 8, 1e-11).unwrap();
        let pe = partition_entropy(&u, -0.5, 2f64.powf(1.5)).unwrap();
        assert_eq!(pe.m_of_x, 16);
        assert!(pe.max_j < 2f64.powf(-1.5));
    }

    #[test]
    fn stopping_form_reports_depth_exhaustion() {
        let u = build_measure(&uniform_1d(), 4, 1e-11).unwrap();
        let err = partition_entropy(&u, -0.5, 1e9).unwrap_err();
        match err {
            QdimError::DepthExhausted { max_depth, best } => {
                assert_eq!(max_depth, 4);
                assert!((best - 0.25).abs() < 1e-12);
            }
            other => panic!("expected depth exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn stopping_form_matches_cascade_shortcut() {
        // Stopping depth grows like ln x / -ln(max factor), so stored-tree
        // comparisons must keep x small enough for the tree's depth: the
        // slow 0.66 * 2^0.5 = 0.9334 chain of the d=3 cascade reaches
        // level 83 already at x = 300.
        let m = build_measure(&menger_spec(), 10, 1e-11).unwrap();
        let sym = CascadeEnvelope::new(&[0.66, 0.2, 0.08, 0.06], -0.5).unwrap();
        for &x in &[1.2, 1.5, 1.9] {
            let pe = partition_entropy(&m, -0.5, x).unwrap();
            assert_eq!(pe.m_of_x, sym.stopping_count(x), "x = {x}");
        }
        let m = build_measure(&skew_1d(0.7), 16, 1e-11).unwrap();
        let sym = CascadeEnvelope::new(&[0.7, 0.3], -0.1).unwrap();
        for &x in &[3.0, 20.0, 50.0] {
            let pe = partition_entropy(&m, -0.1, x).unwrap();
            assert_eq!(pe.m_of_x, sym.stopping_count(x), "x = {x}");
        }
        // Uniform closed form: leaves at the first level with n/2 > log2 x.
        let sym = CascadeEnvelope::new(&[0.5, 0.5], -0.5).unwrap();
        assert_eq!(sym.stopping_count(2f64.powf(1.5)), 16);
        assert_eq!(sym.stopping_count(1e6), 1u64 << 40);
    }

    #[test]
    fn greedy_matches_cascade_shortcut() {
        // Budgets sized so every split word stays within the stored depth.
        let m = build_measure(&menger_spec(), 10, 1e-11).unwrap();
        let sym = CascadeEnvelope::new(&[0.66, 0.2, 0.08, 0.06], -0.5).unwrap();
        for &budget in &[1u64, 4, 7, 10, 13, 22] {
            let part = greedy_partition(&m, -0.5, budget as usize).unwrap();
            let gamma = sym.greedy_gamma(budget);
            assert!(
                (part.max_j - gamma).abs() <= 1e-9 * gamma,
                "budget {budget}: greedy {} vs symbolic {gamma}",
                part.max_j
            );
        }
        let m = build_measure(&skew_1d(0.7), 12, 1e-11).unwrap();
        let sym = CascadeEnvelope::new(&[0.7, 0.3], -0.1).unwrap();
        for &budget in &[2u64, 5, 9, 17, 33] {
            let part = greedy_partition(&m, -0.1, budget as usize).unwrap();
            let gamma = sym.greedy_gamma(budget);
            assert!(
                (part.max_j - gamma).abs() <= 1e-9 * gamma,
                "budget {budget}: greedy {} vs symbolic {gamma}",
                part.max_j
            );
        }
    }

    #[test]
    fn greedy_matches_exhaustive_on_small_trees() {
        for &(p, r, budget) in &[
            (0.5, -0.5, 5usize),
            (0.7, -0.3, 7),
            (0.8, -0.25, 9),
            (0.6, 0.5, 6),
            (0.9, -0.1, 4),
        ] {
            let m = build_measure(&skew_1d(p), 6, 1e-11).unwrap();
            let g = greedy_partition(&m, r, budget).unwrap().max_j;
            let e = exhaustive_gamma(&m, r, budget).unwrap();
            assert!(
                (g - e).abs() <= 1e-12 * e.max(1.0),
                "p={p} r={r} budget={budget}: greedy {g} vs exhaustive {e}"
            );
        }
    }

    #[test]
    fn coarse_counts_match_brute_enumeration() {
        // Level-10 brute force over all 4^10 positive words of the cascade.
        // Every envelope factor is below 1 at r = -0.5, so J equals the
        // word's own value p_w 2^(n/2) and the count of J >= 2^(-alpha n)
        // can be enumerated directly.
        let m = build_measure(&menger_spec(), 10, 1e-11).unwrap();
        let alpha = 1.0;
        let c = coarse_counts(&m, -0.5, alpha, &[10]).unwrap();
        let probs = [0.66, 0.2, 0.08, 0.06];
        let thr = 2f64.powf(-alpha * 10.0);
        let side = 2f64.powf(0.5 * 10.0);
        let mut brute = 0u64;
        let mut stack = vec![(1.0f64, 0u32)];
        while let Some((mass, len)) = stack.pop() {
            if len == 10 {
                if mass * side >= thr {
                    brute += 1;
                }
                continue;
            }
            for &p in &probs {
                stack.push((mass * p, len + 1));
            }
        }
        assert_eq!(c.per_level, vec![(10, brute)]);
        assert!(brute > 0);
    }

    #[test]
    fn coarse_counts_boundary_alphas() {
        // Uniform d=1 at r=-0.5: J = 2^(-n/2) exactly. At alpha = 0.5 the
        // threshold is met with equality (>= counts all 2^n cubes); at
        // alpha = 0.4 the threshold sits above J and every count is zero.
        let m = build_measure(&uniform_1d(), 10, 1e-11).unwrap();
        let at_half = coarse_counts(&m, -0.5, 0.5, &[1, 4, 7, 10]).unwrap();
        assert_eq!(
            at_half.per_level,
            vec![(1, 2), (4, 16), (7, 128), (10, 1024)]
        );
        assert!((at_half.f_upper - 1.0).abs() < 1e-12);
        assert!((at_half.f_lower - 1.0).abs() < 1e-12);
        let below = coarse_counts(&m, -0.5, 0.4, &[1, 4, 7, 10]).unwrap();
        assert!(below.per_level.iter().all(|&(_, c)| c == 0));
        assert_eq!(below.f_upper, 0.0);
        assert_eq!(below.f_lower, 0.0);
    }

    #[test]
    fn stopping_form_trivial_when_root_passes() {
        let u = build_measure(&uniform_1d(), 4, 1e-11).unwrap();
        let pe = partition_entropy(&u, -0.5, 0.5).unwrap();
        assert_eq!(pe.m_of_x, 1);
        assert_eq!(pe.partition.cubes.len(), 1);
    }

    #[test]
    fn coarse_log2_counts_match_exact_counts() {
        let m = build_measure(&menger_spec(), 10, 1e-11).unwrap();
        let sym = CascadeEnvelope::new(&[0.66, 0.2, 0.08, 0.06], -0.5).unwrap();
        for &alpha in &[0.8, 1.0, 1.3] {
            let c = coarse_counts(&m, -0.5, alpha, &[6, 8, 10]).unwrap();
            for &(n, count) in &c.per_level {
                let log2 = sym.coarse_log2_count(alpha, n);
                assert!(
                    (log2 - (count as f64).log2()).abs() < 1e-9,
                    "alpha {alpha} level {n}: {log2} vs exact {count}"
                );
            }
        }
    }

    #[test]
    fn uniform_coarse_dimension_hits_critical_exponent() {
        // Uniform d=1 at r=-0.5 has q_r = 2; F_upper(alpha)/alpha peaks at
        // alpha = 1/2 where every level-n cube qualifies: F = 1, ratio 2.
        let sym = CascadeEnvelope::new(&[0.5, 0.5], -0.5).unwrap();
        let levels: Vec<u32> = (40..=80).step_by(4).collect();
        let grid: Vec<f64> = (1..=40).map(|i| 0.05 * i as f64).collect();
        let oc = sym.coarse_table(&levels).optimized(&grid);
        assert!((oc.best_alpha - 0.5).abs() < 1e-9, "alpha = {}", oc.best_alpha);
        assert!((oc.f_upper - 2.0).abs() < 0.05, "value = {}", oc.f_upper);
        assert!((oc.f_lower - 2.0).abs() < 0.05, "value = {}", oc.f_lower);
    }

    #[test]
    fn optimized_coarse_dimension_on_stored_tree() {
        let m = build_measure(&uniform_1d(), 12, 1e-11).unwrap();
        let grid: Vec<f64> = (1..=30).map(|i| 0.05 * i as f64).collect();
        let levels: Vec<u32> = (6..=12).collect();
        let oc = optimized_coarse_dimension(&m, -0.5, &grid, &levels).unwrap();
        assert!((oc.best_alpha - 0.5).abs() < 1e-9);
        assert!((oc.f_upper - 2.0).abs() < 0.05, "value = {}", oc.f_upper);
    }

    #[test]
    fn kth_largest_walks_the_value_ladder() {
        // Uniform at r = -0.5: values are 2^(-k/2) with multiplicity 2^k.
        let sym = CascadeEnvelope::new(&[0.5, 0.5], -0.5).unwrap();
        assert_eq!(sym.kth_largest(1), 1.0);
        for &(k, want) in &[
            (2u64, 2f64.powf(-0.5)),
            (3, 2f64.powf(-0.5)),
            (4, 0.5),
            (7, 0.5),
            (8, 2f64.powf(-1.5)),
        ] {
            let got = sym.kth_largest(k);
            assert!(
                (got - want).abs() < 1e-9,
                "k = {k}: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn cascade_envelope_rejects_growing_factors() {
        // 0.66 * 2^0.8 > 1: the envelope is not attained at the word itself.
        let err = CascadeEnvelope::new(&[0.66, 0.2, 0.08, 0.06], -0.8).unwrap_err();
        assert!(matches!(err, QdimError::Unsupported(_)));
    }
}
