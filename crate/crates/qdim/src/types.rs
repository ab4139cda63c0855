//! Shared vocabulary types: dyadic cube addresses, measure specifications,
//! run configuration, and the crate-wide error enum.
//!
//! All measures live on the half-open unit cube `(0,1]^d`. A dyadic cube of
//! level `n` is a product of per-axis intervals `(k_i 2^-n, (k_i+1) 2^-n]`
//! with `0 <= k_i < 2^n`, so the level-`n` cubes partition `(0,1]^d` exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Artifact identifier embedded in every emitted CSV/JSON header.
pub const ARTIFACT_VERSION: &str = "qdim/0.1.0";

/// Protocol tag for limit extrapolation of per-level sequences:
/// max of the deepest-level value and the least-squares intercept of the
/// value against 1/n over the deepest half of levels.
pub const TAIL_RULE: &str = "deep-half-lsq-max/v1";

/// Protocol tag for slope-type estimates (e.g. the infinity dimension):
/// least-squares slope over the deepest half of levels.
pub const SLOPE_RULE: &str = "deep-half-slope/v1";

/// Address of one half-open dyadic cube.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CubeIndex {
    /// Refinement level `n >= 0`; the root cube `(0,1]^d` has level 0.
    pub level: u32,
    /// Per-axis indices `k_i` with `0 <= k_i < 2^level`; length is the ambient dimension.
    pub coords: Vec<u64>,
}

impl CubeIndex {
    /// The root cube `(0,1]^d`.
    pub fn root(d: u32) -> Self {
        CubeIndex {
            level: 0,
            coords: vec![0; d as usize],
        }
    }

    pub fn d(&self) -> u32 {
        self.coords.len() as u32
    }

    /// Side length `2^-level`.
    pub fn side(&self) -> f64 {
        0.5f64.powi(self.level as i32)
    }

    /// Cube center `(k + 1/2) 2^-level` per axis.
    pub fn center(&self) -> Vec<f64> {
        let s = self.side();
        self.coords.iter().map(|&k| (k as f64 + 0.5) * s).collect()
    }

    /// Lower-left open corner per axis (`x > corner` for points of the cube).
    pub fn lower(&self) -> Vec<f64> {
        let s = self.side();
        self.coords.iter().map(|&k| k as f64 * s).collect()
    }

    /// The `2^d` children at level `level + 1` in lexicographic coordinate
    /// order (last axis varies fastest).
    ///
    /// Fails with [`QdimError::CapacityExceeded`] when the child level would
    /// not fit the packed 62-bit address budget, i.e. when `level + 1 > 62 / d`.
    pub fn children(&self) -> Result<Vec<CubeIndex>, QdimError> {
        let d = self.d();
        if self.level + 1 > 62 / d {
            return Err(QdimError::CapacityExceeded {
                level: self.level,
                d,
            });
        }
        let mut out = Vec::with_capacity(1usize << d);
        for branch in 0..(1u32 << d) {
            let coords = self
                .coords
                .iter()
                .enumerate()
                .map(|(i, &k)| 2 * k + u64::from((branch >> (d - 1 - i as u32)) & 1))
                .collect();
            out.push(CubeIndex {
                level: self.level + 1,
                coords,
            });
        }
        Ok(out)
    }

    /// Parent cube; `None` for the root.
    pub fn parent(&self) -> Option<CubeIndex> {
        if self.level == 0 {
            return None;
        }
        Some(CubeIndex {
            level: self.level - 1,
            coords: self.coords.iter().map(|&k| k >> 1).collect(),
        })
    }

    /// The level-`n` cube containing the point `x` of `(0,1]^d`
    /// (half-open convention: boundary points belong to the cube they close).
    pub fn containing(x: &[f64], level: u32) -> Result<CubeIndex, QdimError> {
        let scale = (1u64 << level) as f64;
        let mut coords = Vec::with_capacity(x.len());
        for &xi in x {
            if !(xi > 0.0 && xi <= 1.0) {
                return Err(QdimError::PointOutsideDomain { x: xi });
            }
            // k = ceil(x * 2^n) - 1 places boundary points in the lower cube.
            let k = (xi * scale).ceil() as u64 - 1;
            coords.push(k.min((1u64 << level) - 1));
        }
        Ok(CubeIndex { level, coords })
    }
}

/// Distance norm for quantization errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Euclid,
    Max,
}

impl Norm {
    pub fn dist(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Norm::Euclid => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Norm::Max => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
        }
    }
}

/// Declarative measure description accepted by the builder and the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureSpec {
    /// Ambient dimension `d >= 1`.
    pub d: u32,
    #[serde(flatten)]
    pub kind: MeasureKind,
}

/// The three supported measure families.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum MeasureKind {
    /// Self-similar multiplicative cascade: maps `x -> x/2 + o` for offsets
    /// `o` in `{0, 1/2}^d`, with one probability weight per map.
    Ifs {
        offsets: Vec<Vec<f64>>,
        probabilities: Vec<f64>,
    },
    /// A named density from the built-in registry (`d = 1`).
    Density { name: String },
    /// Finitely many atoms inside `(0,1]^d`.
    Atomic {
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
}

/// Reproducibility envelope shared by CLI runs; identical configs must
/// produce byte-identical artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub depth: u32,
    pub seed: u64,
    pub norm: Norm,
    /// Data-parallel execution toggle (summation order stays deterministic).
    pub parallel: bool,
    /// Dyadic grid exponent for grid-based strategies.
    pub grid: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            depth: 10,
            seed: 0,
            norm: Norm::Euclid,
            parallel: true,
            grid: 14,
        }
    }
}

/// Crate-wide error type.
///
/// `exit_code` groups the variants the way the CLI reports them:
/// configuration problems (1), divergent numerics (2), exhausted depth (3).
#[derive(Debug, Error)]
pub enum QdimError {
    #[error("cube level {level} in dimension {d} exceeds the 62-bit address capacity")]
    CapacityExceeded { level: u32, d: u32 },

    #[error("point coordinate {x} lies outside the half-open unit cube (0,1]")]
    PointOutsideDomain { x: f64 },

    #[error("invalid measure specification: {0}")]
    InvalidSpec(String),

    #[error("probabilities sum to {sum}, not 1 (tolerance 1e-12)")]
    ProbabilitySum { sum: f64 },

    #[error("integral over cube level {level}, coords {coords:?} is not finite")]
    NonFiniteIntegral { level: u32, coords: Vec<u64> },

    #[error("no sign change of the partition exponent on bracket [{lo}, {hi}] (values {f_lo}, {f_hi})")]
    NoCrossing { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("invalid bracket [{lo}, {hi}]: {why}")]
    InvalidBracket { lo: f64, hi: f64, why: String },

    #[error("order r = {r} at or below the divergence threshold {threshold}: {what}")]
    Divergent { r: f64, threshold: f64, what: String },

    #[error("refinement exhausted max depth {max_depth} before reaching the target; best value {best}")]
    DepthExhausted { max_depth: u32, best: f64 },

    #[error("unknown registered density '{0}'")]
    UnknownDensity(String),

    #[error("{0}")]
    Unsupported(String),
}

impl QdimError {
    /// CLI exit code class: 1 config, 2 numerical divergence, 3 depth exhaustion.
    pub fn exit_code(&self) -> i32 {
        match self {
            QdimError::Divergent { .. } => 2,
            QdimError::DepthExhausted { .. } => 3,
            _ => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn children_are_lexicographic_and_cover() {
        let root = CubeIndex::root(2);
        let kids = root.children().unwrap();
        assert_eq!(kids.len(), 4);
        let coords: Vec<Vec<u64>> = kids.iter().map(|c| c.coords.clone()).collect();
        assert_eq!(
            coords,
            vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]
        );
        for k in &kids {
            assert_eq!(k.parent().unwrap(), root);
        }
    }

    #[test]
    fn capacity_error_at_packing_limit() {
        let deep = CubeIndex {
            level: 20,
            coords: vec![0, 0, 0],
        };
        // 62/3 = 20, so level 21 children are not addressable in d = 3.
        assert!(matches!(
            deep.children(),
            Err(QdimError::CapacityExceeded { .. })
        ));
        let ok = CubeIndex {
            level: 19,
            coords: vec![0, 0, 0],
        };
        assert!(ok.children().is_ok());
    }

    #[test]
    fn containment_respects_half_open_boundaries() {
        let c = CubeIndex::containing(&[0.5], 1).unwrap();
        assert_eq!(c.coords, vec![0]); // 0.5 belongs to (0, 1/2]
        let c = CubeIndex::containing(&[0.5 + 1e-12], 1).unwrap();
        assert_eq!(c.coords, vec![1]);
        let c = CubeIndex::containing(&[1.0], 3).unwrap();
        assert_eq!(c.coords, vec![7]);
        assert!(CubeIndex::containing(&[0.0], 1).is_err());
    }
}
