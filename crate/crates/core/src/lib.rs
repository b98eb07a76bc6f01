//! Cooperative optical response of atom arrays.
//!
//! Units throughout: the resonance wavenumber is `k = 1` (so `λ = 2π`), the
//! single-atom amplitude decay rate is `γ = 1` and `ħ = 1`. Rabi frequencies,
//! detunings and collective shifts/linewidths are all in units of `γ`.
//!
//! Sign conventions: the atom-light detuning is `Δ = ω − ω₀`, amplitudes
//! evolve as `ḃ = i(H + δH) b + f` with `H_jj = iγ` and off-diagonal blocks
//! `ξ ê*·G(r_j − r_ℓ)·ê`. A collective eigenvalue `δ + iυ` of `H` is resonant
//! at `Δ = −δ` and decays at rate `υ`.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod infinite;
pub mod kernel;
pub mod linalg;
pub mod lli;
pub mod observables;
pub mod ode;
pub mod quantum;
pub mod rng;
pub mod semiclassical;
pub mod special;
pub mod stacked1d;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

/// Real Cartesian vector.
pub type Vec3 = [f64; 3];
/// Complex Cartesian vector (polarizations, dipoles).
pub type CVec3 = [C64; 3];
/// Complex 3×3 tensor, `m[row][col]`.
pub type Mat3 = [[C64; 3]; 3];

/// Resonance wavelength in units of `1/k`.
pub const LAMBDA: f64 = 2.0 * std::f64::consts::PI;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Dipole coupling prefactor `ξ = 6πγ/k³`.
pub const XI: f64 = 6.0 * std::f64::consts::PI;

/// Intensity relative to the single-atom saturation intensity for a set of
/// Rabi frequencies `I/I_sat = 2 Σ |R/γ|²`.
pub fn intensity_ratio(rabi: &[C64]) -> f64 {
    2.0 * rabi.iter().map(|r| r.norm_sqr()).sum::<f64>()
}

/// Rabi frequency magnitude for a single polarization component at `I/I_sat`.
pub fn rabi_for_intensity(i_ratio: f64) -> f64 {
    (i_ratio / 2.0).sqrt()
}

pub(crate) fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub(crate) fn real3(v: Vec3) -> CVec3 {
    [c(v[0], 0.0), c(v[1], 0.0), c(v[2], 0.0)]
}

pub(crate) fn normalize3(v: &CVec3) -> Result<CVec3> {
    let n = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidArgument("zero polarization vector".into()));
    }
    Ok([v[0] / n, v[1] / n, v[2] / n])
}
