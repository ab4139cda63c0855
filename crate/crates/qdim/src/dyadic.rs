//! Dyadic approximation of Borel probability measures on (0,1]^d: per-level
//! cube mass tables for product-cascade, density-backed, and atomic targets.
//!
//! Cubes at level n are half-open products of (k 2^-n, (k+1) 2^-n]. Each
//! level stores only positive-mass cubes as a sorted vector of packed keys
//! (one bit field per axis) next to their masses, so lookups are binary
//! searches and child keys are one shift-add away from the parent key.

use crate::density::example_density;
use crate::types::{CubeIndex, MeasureKind, MeasureSpec, QdimError, SLOPE_RULE};
use crate::numerics::{deep_half, lsq};

/// Bits available per axis in a packed 62-bit key.
pub fn stride_for(d: u32) -> u32 {
    62 / d
}

/// Packs per-axis indices into a single key; axis i occupies bits
/// [i*stride, (i+1)*stride).
pub fn pack_key(coords: &[u64], stride: u32) -> u64 {
    let mut key = 0u64;
    for (i, &k) in coords.iter().enumerate() {
        key |= k << (i as u32 * stride);
    }
    key
}

/// Inverse of `pack_key`.
pub fn unpack_key(key: u64, d: u32, stride: u32) -> Vec<u64> {
    let mask = (1u64 << stride) - 1;
    (0..d).map(|i| (key >> (i * stride)) & mask).collect()
}

/// Key of the ancestor `levels_up` levels above: shifts every axis field.
pub fn ancestor_key(key: u64, levels_up: u32, d: u32, stride: u32) -> u64 {
    let mask = (1u64 << stride) - 1;
    let mut out = 0u64;
    for i in 0..d {
        let k = (key >> (i * stride)) & mask;
        out |= (k >> levels_up) << (i * stride);
    }
    out
}

/// Key of the parent cube: halves every axis field.
pub fn parent_key(key: u64, d: u32, stride: u32) -> u64 {
    let mask = (1u64 << stride) - 1;
    let mut out = 0u64;
    for i in 0..d {
        let k = (key >> (i * stride)) & mask;
        out |= (k >> 1) << (i * stride);
    }
    out
}

/// Offset added to a doubled parent key to select the child whose axis-i
/// half is the upper one exactly when bit i of `branch` is set.
pub fn child_offset_key(branch: u32, d: u32, stride: u32) -> u64 {
    let mut out = 0u64;
    for i in 0..d {
        if (branch >> i) & 1 == 1 {
            out |= 1u64 << (i * stride);
        }
    }
    out
}

/// One stored level: positive-mass cubes only, keys strictly increasing.
#[derive(Debug, Clone, Default)]
pub struct Level {
    pub n: u32,
    pub keys: Vec<u64>,
    pub mass: Vec<f64>,
}

impl Level {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn find(&self, key: u64) -> Option<usize> {
        self.keys.binary_search(&key).ok()
    }
}

/// A measure resolved down to `max_depth` dyadic levels.
pub struct DyadicMeasure {
    pub d: u32,
    pub max_depth: u32,
    pub levels: Vec<Level>,
    /// Largest single-cube mass per level (index = level).
    pub per_level_max: Vec<f64>,
    /// Cubes dropped below the mass floor during a density build.
    pub pruned: u64,
    /// Integral of the raw (unnormalized) density; 1.0 for other builds.
    pub raw_total: f64,
    /// Declared local scaling exponent when built from a registered density.
    pub declared_dim_infty: Option<f64>,
    /// Atom locations and weights when built from an atomic spec.
    pub atoms: Option<(Vec<Vec<f64>>, Vec<f64>)>,
}

impl DyadicMeasure {
    pub fn stride(&self) -> u32 {
        stride_for(self.d)
    }

    pub fn level(&self, n: u32) -> &Level {
        &self.levels[n as usize]
    }

    /// Mass of one cube; `None` when the cube's level is not stored,
    /// 0.0 when the cube holds no mass.
    pub fn mass_of(&self, cube: &CubeIndex) -> Option<f64> {
        if cube.level > self.max_depth || cube.d() != self.d {
            return None;
        }
        let key = pack_key(&cube.coords, self.stride());
        let lv = self.level(cube.level);
        Some(match lv.find(key) {
            Some(i) => lv.mass[i],
            None => 0.0,
        })
    }

    pub fn cube_of(&self, level: u32, key: u64) -> CubeIndex {
        CubeIndex {
            level,
            coords: unpack_key(key, self.d, self.stride()),
        }
    }

    /// Largest cube mass at a level.
    pub fn max_mass(&self, n: u32) -> f64 {
        self.per_level_max[n as usize]
    }

    /// Verifies parent masses equal the sum of their children within
    /// `tol` (absolute, per cube); returns the worst violation.
    pub fn additivity_defect(&self) -> f64 {
        let stride = self.stride();
        let mut worst = 0.0f64;
        for n in 0..self.max_depth {
            let parents = self.level(n);
            let children = self.level(n + 1);
            let mut sums = vec![0.0f64; parents.len()];
            for (i, &ck) in children.keys.iter().enumerate() {
                let pk = parent_key(ck, self.d, stride);
                if let Some(j) = parents.find(pk) {
                    sums[j] += children.mass[i];
                }
            }
            for (j, &m) in parents.mass.iter().enumerate() {
                worst = worst.max((m - sums[j]).abs());
            }
        }
        worst
    }
}

pub(crate) fn validate_probabilities(probs: &[f64]) -> Result<(), QdimError> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(QdimError::InvalidSpec(
            "probabilities must be finite and nonnegative".into(),
        ));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(QdimError::ProbabilitySum { sum });
    }
    Ok(())
}

fn build_ifs(
    d: u32,
    offsets: &[Vec<f64>],
    probabilities: &[f64],
    depth: u32,
) -> Result<DyadicMeasure, QdimError> {
    if offsets.len() != probabilities.len() || offsets.is_empty() {
        return Err(QdimError::InvalidSpec(
            "offsets and probabilities must be equal-length and nonempty".into(),
        ));
    }
    validate_probabilities(probabilities)?;
    let stride = stride_for(d);
    // Each offset vector picks one of the 2^d half-open dyadic children;
    // entries must be 0 or 0.5 and branches must be distinct.
    let mut branches: Vec<(u64, f64)> = Vec::new();
    for (o, &p) in offsets.iter().zip(probabilities) {
        if o.len() != d as usize {
            return Err(QdimError::InvalidSpec(format!(
                "offset {o:?} has wrong dimension (want {d})"
            )));
        }
        let mut branch = 0u32;
        for (i, &oi) in o.iter().enumerate() {
            if oi == 0.5 {
                branch |= 1 << i;
            } else if oi != 0.0 {
                return Err(QdimError::InvalidSpec(format!(
                    "offset entries must be 0 or 0.5, got {oi}"
                )));
            }
        }
        if p > 0.0 {
            branches.push((child_offset_key(branch, d, stride), p));
        }
    }
    branches.sort_by_key(|b| b.0);
    if branches.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(QdimError::InvalidSpec(
            "duplicate offset vectors".into(),
        ));
    }

    let mut levels = Vec::with_capacity(depth as usize + 1);
    levels.push(Level {
        n: 0,
        keys: vec![0],
        mass: vec![1.0],
    });
    for n in 0..depth {
        let parent = &levels[n as usize];
        let m = branches.len();
        let mut keys = Vec::with_capacity(parent.len() * m);
        let mut mass = Vec::with_capacity(parent.len() * m);
        // Child keys are 2*key + offset; offsets are distinct constants, so
        // each branch's stream is sorted and streams never collide. An m-way
        // merge by smallest head yields the sorted child level directly.
        let mut heads = vec![0usize; m];
        loop {
            let mut best: Option<(u64, usize)> = None;
            for (b, &(ok, _)) in branches.iter().enumerate() {
                if heads[b] < parent.len() {
                    let k = 2 * parent.keys[heads[b]] + ok;
                    if best.map_or(true, |(bk, _)| k < bk) {
                        best = Some((k, b));
                    }
                }
            }
            match best {
                None => break,
                Some((k, b)) => {
                    keys.push(k);
                    mass.push(parent.mass[heads[b]] * branches[b].1);
                    heads[b] += 1;
                }
            }
        }
        levels.push(Level {
            n: n + 1,
            keys,
            mass,
        });
    }
    Ok(finish(d, depth, levels, 0, 1.0, None, None))
}

fn build_density(
    d: u32,
    name: &str,
    depth: u32,
    quad_tol: f64,
) -> Result<DyadicMeasure, QdimError> {
    if d != 1 {
        return Err(QdimError::Unsupported(
            "registered densities are one-dimensional".into(),
        ));
    }
    let _ = quad_tol;
    let reg = example_density(name)?;
    let h = reg.density();
    let n_leaves = 1u64 << depth;
    let width = 0.5f64.powi(depth as i32);
    // Children first: integrate every leaf cell, then sum pairwise upward so
    // additivity is exact by construction.
    let mut keys = Vec::new();
    let mut mass = Vec::new();
    let mut pruned = 0u64;
    for k in 0..n_leaves {
        let a = k as f64 * width;
        let b = (k + 1) as f64 * width;
        let m = h.interval_mass(a, b);
        if !m.is_finite() {
            return Err(QdimError::NonFiniteIntegral {
                level: depth,
                coords: vec![k],
            });
        }
        if m >= 1e-300 {
            keys.push(k);
            mass.push(m);
        } else if m > 0.0 {
            pruned += 1;
        }
    }
    let mut levels: Vec<Level> = vec![Default::default(); depth as usize + 1];
    levels[depth as usize] = Level {
        n: depth,
        keys,
        mass,
    };
    for n in (0..depth).rev() {
        let child = &levels[n as usize + 1];
        let mut keys = Vec::with_capacity(child.len() / 2 + 1);
        let mut mass: Vec<f64> = Vec::with_capacity(child.len() / 2 + 1);
        for (i, &ck) in child.keys.iter().enumerate() {
            let pk = ck >> 1;
            if keys.last() == Some(&pk) {
                *mass.last_mut().unwrap() += child.mass[i];
            } else {
                keys.push(pk);
                mass.push(child.mass[i]);
            }
        }
        levels[n as usize] = Level { n, keys, mass };
    }
    let raw_total = levels[0].mass.first().copied().unwrap_or(0.0);
    if !(raw_total.is_finite() && raw_total > 0.0) {
        return Err(QdimError::NonFiniteIntegral {
            level: 0,
            coords: vec![0],
        });
    }
    for lv in &mut levels {
        for m in &mut lv.mass {
            *m /= raw_total;
        }
    }
    Ok(finish(
        d,
        depth,
        levels,
        pruned,
        raw_total,
        Some(reg.dim_infty),
        None,
    ))
}

fn build_atomic(
    d: u32,
    points: &[Vec<f64>],
    weights: &[f64],
    depth: u32,
) -> Result<DyadicMeasure, QdimError> {
    if points.len() != weights.len() || points.is_empty() {
        return Err(QdimError::InvalidSpec(
            "points and weights must be equal-length and nonempty".into(),
        ));
    }
    validate_probabilities(weights)?;
    let stride = stride_for(d);
    for p in points {
        if p.len() != d as usize {
            return Err(QdimError::InvalidSpec(format!(
                "point {p:?} has wrong dimension (want {d})"
            )));
        }
        for &x in p {
            if !(x > 0.0 && x <= 1.0) {
                return Err(QdimError::PointOutsideDomain { x });
            }
        }
    }
    let mut levels = Vec::with_capacity(depth as usize + 1);
    for n in 0..=depth {
        let scale = 2f64.powi(n as i32);
        let mut pairs: Vec<(u64, f64)> = points
            .iter()
            .zip(weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(p, &w)| {
                let coords: Vec<u64> = p.iter().map(|&x| (x * scale).ceil() as u64 - 1).collect();
                (pack_key(&coords, stride), w)
            })
            .collect();
        pairs.sort_by_key(|p| p.0);
        let mut keys = Vec::new();
        let mut mass: Vec<f64> = Vec::new();
        for (k, w) in pairs {
            if keys.last() == Some(&k) {
                *mass.last_mut().unwrap() += w;
            } else {
                keys.push(k);
                mass.push(w);
            }
        }
        levels.push(Level { n, keys, mass });
    }
    Ok(finish(
        d,
        depth,
        levels,
        0,
        1.0,
        None,
        Some((points.to_vec(), weights.to_vec())),
    ))
}

fn finish(
    d: u32,
    depth: u32,
    levels: Vec<Level>,
    pruned: u64,
    raw_total: f64,
    declared_dim_infty: Option<f64>,
    atoms: Option<(Vec<Vec<f64>>, Vec<f64>)>,
) -> DyadicMeasure {
    let per_level_max = levels
        .iter()
        .map(|lv| lv.mass.iter().copied().fold(0.0f64, f64::max))
        .collect();
    DyadicMeasure {
        d,
        max_depth: depth,
        levels,
        per_level_max,
        pruned,
        raw_total,
        declared_dim_infty,
        atoms,
    }
}

/// Resolves a measure spec to `depth` dyadic levels. `quad_tol` bounds the
/// per-cell quadrature error for density targets that need it.
pub fn build_measure(
    spec: &MeasureSpec,
    depth: u32,
    quad_tol: f64,
) -> Result<DyadicMeasure, QdimError> {
    let d = spec.d;
    if d == 0 || d > 62 {
        return Err(QdimError::InvalidSpec(format!("dimension {d} out of range")));
    }
    if depth > stride_for(d) {
        return Err(QdimError::CapacityExceeded {
            level: depth,
            d,
        });
    }
    match &spec.kind {
        MeasureKind::Ifs {
            offsets,
            probabilities,
        } => build_ifs(d, offsets, probabilities, depth),
        MeasureKind::Density { name } => build_density(d, name, depth, quad_tol),
        MeasureKind::Atomic { points, weights } => build_atomic(d, points, weights, depth),
    }
}

/// Diagnostics of the local scaling estimate.
#[derive(Debug, Clone)]
pub struct DimInftyEstimate {
    /// Deep-half least-squares slope of -log2(max cube mass) against level.
    pub value: f64,
    /// (level, -log2(max mass)/level) for every stored level.
    pub per_level: Vec<(u32, f64)>,
    pub slope_rule: &'static str,
    /// Ratio at the deepest level alone.
    pub last_level_ratio: f64,
    /// Worst absolute deviation of the fitted line over its window.
    pub fit_residual: f64,
}

/// Estimates the worst-case local scaling exponent: the growth rate of
/// -log2 of the largest cube mass per level, fit over the deepest half of
/// the stored levels.
pub fn dim_infty_estimate(m: &DyadicMeasure) -> Result<DimInftyEstimate, QdimError> {
    if m.max_depth < 4 {
        return Err(QdimError::InvalidSpec(format!(
            "local scaling estimate requires depth >= 4, got {}",
            m.max_depth
        )));
    }
    let pts: Vec<(f64, f64)> = (1..=m.max_depth)
        .map(|n| (n as f64, -m.max_mass(n).log2()))
        .collect();
    let per_level = pts.iter().map(|&(n, y)| (n as u32, y / n)).collect();
    let window = deep_half(&pts);
    let (slope, intercept) = lsq(window);
    let fit_residual = window
        .iter()
        .map(|&(x, y)| (slope * x + intercept - y).abs())
        .fold(0.0f64, f64::max);
    let last = *pts.last().unwrap();
    Ok(DimInftyEstimate {
        value: slope,
        per_level,
        slope_rule: SLOPE_RULE,
        last_level_ratio: last.1 / last.0,
        fit_residual,
    })
}
