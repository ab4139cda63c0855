//! Closed forms computed without the spectra or quantizer machinery, used
//! by the test suites to pin derived values independently.
//!
//! Each function here is short enough to audit by hand: the cascade moment
//! scaling collapses to one level by self-similarity, the uniform midpoint
//! error integrates |u|^r over one cell in closed form, and the registered
//! density coefficients are frozen numeric references with the quadrature
//! budget that produced them.

use crate::dyadic::validate_probabilities;
use crate::types::QdimError;

pub use crate::density::example_density;

/// Mass moment scaling of a multiplicative cascade: the level-n moment sum
/// factorizes as (sum_i p_i^q)^n, so beta_n(q) = log2(sum_i p_i^q) for
/// every n at once.
pub fn cascade_beta(probabilities: &[f64], q: f64) -> Result<f64, QdimError> {
    validate_probabilities(probabilities)?;
    let s: f64 = probabilities.iter().map(|&p| p.powf(q)).sum();
    Ok(s.log2())
}

/// Error of the n-point midpoint codebook on the uniform density.
///
/// Per cell of width 1/n the moment is 2 int_0^{1/(2n)} u^r du, giving
/// e = (2^-r / (1+r))^(1/r) / n for r > -1, r != 0, and the geometric
/// mean exp(ln(1/(2n)) - 1) = exp(-1)/(2n) at r = 0. At or below r = -1
/// the cell integral diverges.
pub fn uniform_midpoint_error(n: usize, r: f64) -> Result<f64, QdimError> {
    if n == 0 {
        return Err(QdimError::InvalidSpec("codebook size must be >= 1".into()));
    }
    if r <= -1.0 {
        return Err(QdimError::Divergent {
            r,
            threshold: -1.0,
            what: "midpoint cell moment of the uniform density".into(),
        });
    }
    let n = n as f64;
    if r == 0.0 {
        Ok((-1.0f64).exp() / (2.0 * n))
    } else {
        Ok((2f64.powf(-r) / (1.0 + r)).powf(1.0 / r) / n)
    }
}

/// Frozen geometric-mean coefficients Phi_0 of the registered densities.
///
/// The uniform and linear values are exact closed forms (1 and e^(1/2)/2);
/// the other two were produced by the adaptive entropy quadrature at
/// tolerance 1e-9 and are stable to 1e-6 across budget changes, so they
/// pin the quadrature rather than echo it.
pub fn phi_zero_reference(name: &str) -> Result<f64, QdimError> {
    match name {
        "uniform" => Ok(1.0),
        "linear2x" => Ok(0.5f64.exp() / 2.0),
        "ex28" => Ok(0.242044362836),
        "ex29" => Ok(0.993476183245),
        other => Err(QdimError::UnknownDensity(other.into())),
    }
}
