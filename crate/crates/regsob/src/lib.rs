//! Regional fractional Sobolev energies on the half-space.
//!
//! The crate evaluates the regional semi-norm
//! `I[u] = ∬_{Ω×Ω} (u(x)-u(y))^2 |x-y|^{-(n+2σ)} dx dy` for functions on the
//! upper half-space that are radial in the horizontal variables, computes the
//! half-space Sobolev extremizer, estimates the curvature constant `Γ₀`, and
//! checks the boundary-flattening inequalities behind the curvature expansion
//! of the sharp constant on graph domains.
//!
//! Radial symmetry reduces every `2n`-dimensional pair integral to a
//! four-dimensional integral in `(r, z) × (s, w)` against the angular kernel
//! of [`kernel::angular_kernel`].

pub mod energy;
pub mod expansion;
pub mod field;
pub mod fit;
pub mod gamma0;
pub mod kernel;
pub mod linalg;
pub mod minimize;
pub mod par;
pub mod quad;
pub mod rearrange;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("kernel evaluated on the diagonal singularity at r = s = {r}, t = 0")]
    DiagonalSingularity { r: f64 },
    #[error("table of {entries} entries ({bytes} bytes) exceeds the memory budget of {budget} bytes")]
    OutOfMemory { entries: usize, bytes: usize, budget: usize },
    #[error("grading exponent {0} must be at least 1")]
    InvalidGrading(f64),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("unknown profile kind `{0}`")]
    UnknownKind(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checksum failure: {0}")]
    ChecksumFailure(String),
    #[error("table exponent {found} does not match the required {expected}")]
    TableExponentMismatch { found: f64, expected: f64 },
    #[error("profile is not compactly supported; the brute-force oracle refuses it")]
    NonCompactSupport,
    #[error("field is identically zero")]
    ZeroField,
    #[error("point ({r}, {z}) is too close to the grid edge for exclusion radius {eps}")]
    PointTooCloseToEdge { r: f64, z: f64, eps: f64 },
    #[error("slice interaction is singular at zero separation")]
    SingularAtZeroSeparation,
    #[error("solver stagnated after {iterations} iterations (last change {last_change:e})")]
    StagnationWithoutConvergence { iterations: usize, last_change: f64 },
    #[error("line search exhausted at iteration {0}")]
    DivergentStep(usize),
    #[error("invalid weight exponent γ = {gamma} (2σ = {two_sigma})")]
    InvalidGamma { gamma: f64, two_sigma: f64 },
    #[error("extrapolation error {error:e} exceeds ten times |value| = {value:e}")]
    InsufficientConvergence { value: f64, error: f64 },
    #[error("point lies outside the boundary chart")]
    OutsideChart,
    #[error("coincident points")]
    CoincidentPoints,
    #[error("Γ₀ report required")]
    MissingGamma0,
    #[error("Monte Carlo relative error {0:e} too high; verdict withheld")]
    MonteCarloVarianceTooHigh(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Surface measure of the unit sphere `S^k ⊂ R^{k+1}`.
pub fn sphere_area(k: usize) -> f64 {
    let h = (k as f64 + 1.0) / 2.0;
    2.0 * std::f64::consts::PI.powf(h) / statrs::function::gamma::gamma(h)
}

/// Critical Sobolev exponent `2n/(n-2σ)`.
pub fn critical_exponent(n: usize, sigma: f64) -> f64 {
    2.0 * n as f64 / (n as f64 - 2.0 * sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_areas_match_known_values() {
        let pi = std::f64::consts::PI;
        assert!((sphere_area(0) - 2.0).abs() < 1e-14);
        assert!((sphere_area(1) - 2.0 * pi).abs() < 1e-13);
        assert!((sphere_area(2) - 4.0 * pi).abs() < 1e-13);
        assert!((sphere_area(3) - 2.0 * pi * pi).abs() < 1e-12);
    }

    #[test]
    fn critical_exponent_n4() {
        assert!((critical_exponent(4, 0.75) - 3.2).abs() < 1e-15);
    }
}
