//! Infinite square lattices in the `yz` plane: regularized lattice sums,
//! uniform-mode (superatom) models, oblique incidence, two-mode model.
//!
//! The lattice sum `S(q) = Σ_{R≠0} G(R) e^{iq·R}` is evaluated in reciprocal
//! space with each site smeared by a Gaussian of `1/e` width `η`. Smearing
//! multiplies every propagating-order contribution by exactly `e^{−η²/4}`,
//! which is divided out, so the corrected sums do not depend on `η`.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, CMat};
use crate::special::{dawson, erfc};
use crate::{c, CVec3, Error, Mat3, Result, Vec3, C64, LAMBDA, XI};

const PI: f64 = std::f64::consts::PI;

/// Default regulator width in units of `a`.
pub const DEFAULT_ETA: f64 = 0.05;

/// Default `η` ladder (units of `a`) for extrapolation to `η → 0`.
pub const ETA_LADDER: [f64; 3] = [0.05, 0.04, 0.03];

/// Reciprocal vectors within this distance of the light cone are refused.
const CONE_TOL: f64 = 1e-9;

/// Collective couplings of a lattice at Bloch vector `q = (q_y, q_z)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatticeSums {
    pub a: f64,
    pub q: [f64; 2],
    pub eta: f64,
    /// Reciprocal shells `|m|, |n| ≤ shells` retained.
    pub shells: usize,
    /// `Ω̃_{νμ} = ξ Re S_{νμ}` (Cartesian `x, y, z`).
    pub omega: [[f64; 3]; 3],
    /// `γ̃_{νμ} = ξ Im S_{νμ}`.
    pub gamma: [[f64; 3]; 3],
}

impl LatticeSums {
    /// `Ω̃ + iγ̃`.
    pub fn tensor(&self) -> Mat3 {
        let mut t = [[c(0.0, 0.0); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                t[i][j] = c(self.omega[i][j], self.gamma[i][j]);
            }
        }
        t
    }

    /// `H(q) = Ω̃ + iγ̃ + iγ`, the Bloch-mode coupling matrix.
    pub fn h(&self) -> CMat {
        let t = self.tensor();
        Array2::from_shape_fn((3, 3), |(i, j)| t[i][j] + if i == j { c(0.0, 1.0) } else { c(0.0, 0.0) })
    }

    /// `ê*·(Ω̃ + iγ̃)·ê`, split into shift and width.
    pub fn project(&self, e: &CVec3) -> (f64, f64) {
        let t = self.tensor();
        let mut s = c(0.0, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                s += e[i].conj() * t[i][j] * e[j];
            }
        }
        (s.re, s.im)
    }

    /// Eigenvalues of the in-plane (`yz`) block of [`LatticeSums::h`],
    /// ordered by linewidth.
    pub fn in_plane_eigenvalues(&self) -> Result<[C64; 2]> {
        let h = self.h();
        let b = Array2::from_shape_fn((2, 2), |(i, j)| h[[i + 1, j + 1]]);
        let (v, _) = linalg::eig(&b)?;
        let mut out = [v[0], v[1]];
        out.sort_by(|x, y| x.im.total_cmp(&y.im));
        Ok(out)
    }
}

/// Shell count for which the regulator suppresses the outermost shell below
/// `1e-12`.
pub fn default_shells(a: f64, eta: f64) -> usize {
    (14.0 / (eta * 2.0 * PI / a)) as usize + 3
}

/// Regularized self term `G_η(0)` (isotropic; one diagonal element).
fn self_term(eta: f64) -> C64 {
    let p32 = PI.powf(1.5);
    let re = -1.0 / (3.0 * p32 * eta.powi(3)) + 1.0 / (3.0 * p32 * eta) - dawson(eta / 2.0) / (3.0 * p32);
    c(re, (-eta * eta / 4.0).exp() / (6.0 * PI))
}

/// Lattice sums for spacing `a`, Bloch vector `q`, regulator `η` (absolute
/// units) and optional shell count.
pub fn lattice_sums(a: f64, q: [f64; 2], eta: f64, shells: Option<usize>) -> Result<LatticeSums> {
    if !(a > 0.0) || !(eta > 0.0) || !q.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidArgument("lattice sums need a > 0, η > 0 and finite q".into()));
    }
    let n = shells.unwrap_or_else(|| default_shells(a, eta)) as i64;
    let b = 2.0 * PI / a;
    let e4 = (-eta * eta / 4.0).exp();
    let sqpi = PI.sqrt();
    // accumulate yy, zz, yz, xx
    let mut acc = [c(0.0, 0.0); 4];
    for m in -n..=n {
        let py = q[0] + b * m as f64;
        for l in -n..=n {
            let pz = q[1] + b * l as f64;
            let p2 = py * py + pz * pz;
            if (p2 - 1.0).abs() < CONE_TOL {
                return Err(Error::BraggResonance(py - q[0], pz - q[1]));
            }
            let reg = (-p2 * eta * eta / 4.0).exp();
            let j = if p2 < 1.0 {
                let kap = (1.0 - p2).sqrt();
                c(-reg * dawson(kap * eta / 2.0) / (sqpi * kap), e4 / (2.0 * kap))
            } else {
                let beta = (p2 - 1.0).sqrt();
                c(e4 * erfc(beta * eta / 2.0) / (2.0 * beta), 0.0)
            };
            acc[0] += j * (1.0 - py * py);
            acc[1] += j * (1.0 - pz * pz);
            acc[2] -= j * (py * pz);
            acc[3] += j * p2 - reg / (sqpi * eta);
        }
    }
    let area = a * a;
    let g0 = self_term(eta);
    let corr = (eta * eta / 4.0).exp();
    let s = |v: C64, diag: bool| (v / area - if diag { g0 } else { c(0.0, 0.0) }) * corr * XI;
    let (xx, yy, zz, yz) = (s(acc[3], true), s(acc[0], true), s(acc[1], true), s(acc[2], false));
    let full = [[xx, c(0.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), yy, yz], [c(0.0, 0.0), yz, zz]];
    Ok(LatticeSums {
        a,
        q,
        eta,
        shells: n as usize,
        omega: full.map(|r| r.map(|x| x.re)),
        gamma: full.map(|r| r.map(|x| x.im)),
    })
}

/// Raw sums over an `η` ladder and their Richardson extrapolation in `η²`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Extrapolated {
    pub raw: Vec<LatticeSums>,
    pub omega: [[f64; 3]; 3],
    pub gamma: [[f64; 3]; 3],
}

impl Extrapolated {
    pub fn sums(&self) -> LatticeSums {
        let mut s = self.raw[0].clone();
        s.omega = self.omega;
        s.gamma = self.gamma;
        s.eta = 0.0;
        s
    }
}

/// Lattice sums over `ladder` (units of `a`), extrapolated to `η = 0` by
/// polynomial extrapolation in `η²`.
pub fn lattice_sums_extrapolated(a: f64, q: [f64; 2], ladder: &[f64]) -> Result<Extrapolated> {
    if ladder.is_empty() {
        return Err(Error::InvalidArgument("empty η ladder".into()));
    }
    let raw: Vec<LatticeSums> = ladder.iter().map(|&e| lattice_sums(a, q, e * a, None)).collect::<Result<_>>()?;
    let x: Vec<f64> = raw.iter().map(|s| s.eta * s.eta).collect();
    let mut omega = [[0.0; 3]; 3];
    let mut gamma = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let yo: Vec<f64> = raw.iter().map(|s| s.omega[i][j]).collect();
            let yg: Vec<f64> = raw.iter().map(|s| s.gamma[i][j]).collect();
            omega[i][j] = neville_at_zero(&x, &yo);
            gamma[i][j] = neville_at_zero(&x, &yg);
        }
    }
    Ok(Extrapolated { raw, omega, gamma })
}

/// Value at `x = 0` of the interpolating polynomial through `(x_i, y_i)`.
fn neville_at_zero(x: &[f64], y: &[f64]) -> f64 {
    let mut p = y.to_vec();
    let n = x.len();
    for k in 1..n {
        for i in 0..n - k {
            p[i] = (x[i + k] * p[i] - x[i] * p[i + 1]) / (x[i + k] - x[i]);
        }
    }
    p[0]
}

/// Total uniform-mode linewidth `γ + γ̃ = 3πγ/(ka)²`, valid for `a < λ`.
pub fn uniform_linewidth_analytic(a: f64) -> Result<f64> {
    if !(a > 0.0 && a < LAMBDA) {
        return Err(Error::InvalidArgument(format!("closed form needs 0 < a < λ (got a = {:.4}λ)", a / LAMBDA)));
    }
    Ok(3.0 * PI / (a * a))
}

/// Collective shift and width of the phase-uniform mode for an in-plane or
/// perpendicular polarization, from the extrapolated sums at `q = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformMode {
    /// `Ω̃`
    pub omega: f64,
    /// `γ̃`
    pub gamma: f64,
}

impl UniformMode {
    pub fn new(omega: f64, gamma: f64) -> Self {
        UniformMode { omega, gamma }
    }

    pub fn from_lattice(a: f64, polarization: Vec3) -> Result<Self> {
        let e = crate::normalize3(&crate::real3(polarization))?;
        let s = lattice_sums(a, [0.0, 0.0], DEFAULT_ETA * a, None)?;
        let (omega, gamma) = s.project(&e);
        Ok(UniformMode { omega, gamma })
    }

    /// Total linewidth `γ + γ̃`.
    pub fn width(&self) -> f64 {
        1.0 + self.gamma
    }

    /// LLI amplitude `ρ_ge = −R/(Δ + Ω̃ + i(γ + γ̃))`.
    pub fn amplitude(&self, delta: f64, rabi: C64) -> C64 {
        -rabi / c(delta + self.omega, self.width())
    }

    /// `(r, t)` of the lattice at normal incidence.
    pub fn rt(&self, delta: f64) -> (C64, C64) {
        single_mode_rt(delta, self.omega, self.gamma)
    }
}

/// `r = −i(γ + γ̃)/(Δ + Ω̃ + i(γ + γ̃))`, `t = 1 + r`.
pub fn single_mode_rt(delta: f64, omega_t: f64, gamma_t: f64) -> (C64, C64) {
    let w = 1.0 + gamma_t;
    let r = c(0.0, -w) / c(delta + omega_t, w);
    (r, 1.0 + r)
}

/// Lattice spacings in `[a_lo, a_hi]` (units `1/k`) at which the in-plane
/// uniform-mode shift `Ω̃_yy(q = 0)` vanishes, located by a scan with `n`
/// intervals and bisection.
pub fn zero_shift_spacings(a_lo: f64, a_hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(a_lo > 0.0 && a_hi > a_lo) || n == 0 {
        return Err(Error::InvalidArgument("need 0 < a_lo < a_hi and n ≥ 1".into()));
    }
    let f = |a: f64| -> Result<f64> { Ok(lattice_sums(a, [0.0, 0.0], DEFAULT_ETA * a, None)?.omega[1][1]) };
    let grid: Vec<f64> = (0..=n).map(|i| a_lo + (a_hi - a_lo) * i as f64 / n as f64).collect();
    let vals: Vec<f64> = grid.par_iter().map(|&a| f(a)).collect::<Result<_>>()?;
    let mut roots = Vec::new();
    for i in 0..n {
        if vals[i] == 0.0 {
            roots.push(grid[i]);
        } else if vals[i] * vals[i + 1] < 0.0 {
            let (mut lo, mut hi, mut flo) = (grid[i], grid[i + 1], vals[i]);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid)?;
                if fm * flo <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
    }
    Ok(roots)
}

/// Parameters of the two uniform collective modes coupled by level shifts:
/// the perpendicular (`P`, dipoles along `x`) and in-plane (`I`, along `y`)
/// modes with shifts `δ` and widths `υ`, and `δ̄ = (δ₋ + δ₊)/2`,
/// `δ̃ = (δ₊ − δ₋)/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoMode {
    pub delta_p: f64,
    pub upsilon_p: f64,
    pub delta_i: f64,
    pub upsilon_i: f64,
    pub delta_bar: f64,
    pub delta_tilde: f64,
}

/// Relative tolerance for flagging the exceptional point of the two-mode
/// model.
pub const EP_TOL: f64 = 1e-9;

impl TwoMode {
    /// `Z_P(Δ₀) = Δ₀ + δ_P − δ̃ + iυ_P`.
    pub fn z_p(&self, delta0: f64) -> C64 {
        c(delta0 + self.delta_p - self.delta_tilde, self.upsilon_p)
    }

    /// `Z_I(Δ₀) = Δ₀ + δ_I − δ̃ + iυ_I`.
    pub fn z_i(&self, delta0: f64) -> C64 {
        c(delta0 + self.delta_i - self.delta_tilde, self.upsilon_i)
    }

    /// Steady amplitudes `(ρ_x, ρ_y)` under in-plane drive `R`.
    pub fn steady_state(&self, delta0: f64, rabi: C64) -> (C64, C64) {
        let (zp, zi) = (self.z_p(delta0), self.z_i(delta0));
        let y = zp * rabi / (self.delta_bar * self.delta_bar - zp * zi);
        let x = c(0.0, -self.delta_bar) * y / zp;
        (x, y)
    }

    /// `r = iυ_I Z_P/(δ̄² − Z_P Z_I)`.
    pub fn r(&self, delta0: f64) -> C64 {
        let (zp, zi) = (self.z_p(delta0), self.z_i(delta0));
        c(0.0, self.upsilon_i) * zp / (self.delta_bar * self.delta_bar - zp * zi)
    }

    /// Detunings `Δ₀` of perfect reflection when `υ_P = 0`:
    /// `Δ₀ + δ_P − δ̃ = δ_d ± (δ̄² + δ_d²)^{1/2}`, `δ_d = (δ_P − δ_I)/2`.
    pub fn perfect_reflection_detunings(&self) -> [f64; 2] {
        let dd = (self.delta_p - self.delta_i) / 2.0;
        let s = (self.delta_bar * self.delta_bar + dd * dd).sqrt();
        let off = self.delta_tilde - self.delta_p;
        [off + dd - s, off + dd + s]
    }

    /// Detuning of the perpendicular resonance, `Δ₀ + δ_P − δ̃ = 0`.
    pub fn transparency_detuning(&self) -> f64 {
        self.delta_tilde - self.delta_p
    }

    /// Reflection at the perpendicular resonance for `δ_P ≈ δ_I`:
    /// `r ≈ −υ_I υ_P/(δ̄² + υ_I υ_P)`.
    pub fn finite_size_resonance_r(&self) -> f64 {
        let p = self.upsilon_i * self.upsilon_p;
        -p / (self.delta_bar * self.delta_bar + p)
    }

    /// Level shift `|δ̄| = |υ_I − υ_P|/2` at which the two modes coalesce
    /// (for `δ_P = δ_I`).
    pub fn exceptional_delta_bar(&self) -> f64 {
        (self.upsilon_i - self.upsilon_p).abs() / 2.0
    }

    pub fn is_exceptional(&self) -> bool {
        let ep = self.exceptional_delta_bar();
        (self.delta_p - self.delta_i).abs() <= EP_TOL * (1.0 + ep)
            && (self.delta_bar.abs() - ep).abs() <= EP_TOL * (1.0 + ep)
    }

    /// Generator `M` of `(ρ̇_x, ρ̇_y) = M (ρ_x, ρ_y) + (0, iR)` at `Δ₀`.
    pub fn generator(&self, delta0: f64) -> CMat {
        let i = c(0.0, 1.0);
        let mut m = CMat::zeros((2, 2));
        m[[0, 0]] = i * self.z_p(delta0);
        m[[0, 1]] = c(-self.delta_bar, 0.0);
        m[[1, 0]] = c(self.delta_bar, 0.0);
        m[[1, 1]] = i * self.z_i(delta0);
        m
    }
}

/// Response of the infinite lattice to an oblique plane wave.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObliqueResponse {
    /// Incident wavevector `k̂ = (cos θ, sin θ cos φ, sin θ sin φ)`.
    pub k: Vec3,
    /// Amplitude vector of the transmitted wave (incident included), per
    /// unit incident Rabi frequency.
    pub transmitted: CVec3,
    /// Amplitude vector of the specularly reflected wave.
    pub reflected: CVec3,
    pub reflectance: f64,
    pub transmittance: f64,
    /// Eigenvalues of `Ω̃ + iγ̃ + iγ` at `q = k_∥`.
    pub eigenvalues: [C64; 3],
    /// Only the zeroth diffraction order propagates.
    pub single_order: bool,
}

fn transverse_projector(k: &Vec3) -> [[f64; 3]; 3] {
    let mut p = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            p[i][j] = if i == j { 1.0 } else { 0.0 } - k[i] * k[j];
        }
    }
    p
}

/// Plane wave at polar angle `θ` from the normal and azimuth `φ` from the `y`
/// axis, polarization `pol` (projected to be transverse), detuning `Δ`.
pub fn nonnormal_response(a: f64, theta: f64, phi: f64, pol: Vec3, delta: f64) -> Result<ObliqueResponse> {
    if !(theta.abs() < PI / 2.0) {
        return Err(Error::InvalidArgument("incidence angle must satisfy |θ| < π/2".into()));
    }
    let sums = lattice_sums(a, [theta.sin() * phi.cos(), theta.sin() * phi.sin()], DEFAULT_ETA * a, None)?;
    oblique_from_sums(&sums, theta, phi, pol, delta)
}

/// As [`nonnormal_response`] with precomputed sums at `q = k_∥`.
pub fn oblique_from_sums(sums: &LatticeSums, theta: f64, phi: f64, pol: Vec3, delta: f64) -> Result<ObliqueResponse> {
    let k = [theta.cos(), theta.sin() * phi.cos(), theta.sin() * phi.sin()];
    let kr = [-k[0], k[1], k[2]];
    let pk = transverse_projector(&k);
    let mut e = [c(0.0, 0.0); 3];
    for i in 0..3 {
        e[i] = c((0..3).map(|j| pk[i][j] * pol[j]).sum(), 0.0);
    }
    let e = crate::normalize3(&e)?;
    let mut m = sums.h();
    for i in 0..3 {
        m[[i, i]] += delta;
    }
    let rhs = Array1::from(e.to_vec());
    let rho = linalg::solve(&m, &rhs)?.mapv(|x| -x);
    let pref = c(0.0, XI / (2.0 * sums.a * sums.a * theta.cos()));
    let prj = |p: [[f64; 3]; 3]| -> CVec3 {
        let mut out = [c(0.0, 0.0); 3];
        for i in 0..3 {
            out[i] = pref * (0..3).map(|j| rho[j] * p[i][j]).sum::<C64>();
        }
        out
    };
    let scat_t = prj(pk);
    let reflected = prj(transverse_projector(&kr));
    let transmitted = [e[0] + scat_t[0], e[1] + scat_t[1], e[2] + scat_t[2]];
    let nsq = |v: &CVec3| v.iter().map(|x| x.norm_sqr()).sum::<f64>();
    let (vals, _) = linalg::eig(&sums.h())?;
    let mut eigenvalues = [vals[0], vals[1], vals[2]];
    eigenvalues.sort_by(|x, y| x.im.total_cmp(&y.im));
    Ok(ObliqueResponse {
        k,
        transmitted,
        reflected,
        reflectance: nsq(&reflected),
        transmittance: nsq(&transmitted),
        eigenvalues,
        single_order: single_order(sums.a, [k[1], k[2]]),
    })
}

/// True if no diffraction order other than the zeroth one propagates.
pub fn single_order(a: f64, q: [f64; 2]) -> bool {
    let b = 2.0 * PI / a;
    let n = (2.0 / b).ceil() as i64 + 1;
    for m in -n..=n {
        for l in -n..=n {
            if m == 0 && l == 0 {
                continue;
            }
            let p2 = (q[0] + b * m as f64).powi(2) + (q[1] + b * l as f64).powi(2);
            if p2 <= 1.0 {
                return false;
            }
        }
    }
    true
}

/// Bloch-band eigenvalues `δ(q) + iυ(q)` of `Ω̃ + iγ̃ + iγ` for every `q`,
/// ordered by linewidth.
pub fn band_structure(a: f64, qs: &[[f64; 2]]) -> Vec<Result<[C64; 3]>> {
    qs.par_iter()
        .map(|&q| {
            let s = lattice_sums(a, q, DEFAULT_ETA * a, None)?;
            let (v, _) = linalg::eig(&s.h())?;
            let mut out = [v[0], v[1], v[2]];
            out.sort_by(|x, y| x.im.total_cmp(&y.im));
            Ok(out)
        })
        .collect()
}

/// Reflection with a Rydberg-EIT control field:
/// `r = iυ_I Z_r/(|R_c|² − Z_r Z_I)`, `Z_I = Δ + δ_I + iυ_I`,
/// `Z_r = Δ_r + U + iγ_r`.
pub fn rydberg_eit_rt(
    delta: f64,
    delta_r: f64,
    u: f64,
    rabi_c: C64,
    upsilon_i: f64,
    delta_i: f64,
    gamma_r: f64,
) -> C64 {
    let zi = c(delta + delta_i, upsilon_i);
    let zr = c(delta_r + u, gamma_r);
    c(0.0, upsilon_i) * zr / (rabi_c.norm_sqr() - zr * zi)
}

/// Odd-parity (magnetic-dipole-like) uniform mode:
/// `r = iγ_M/(Δ_M + iγ_M)`, `t = Δ_M/(Δ_M + iγ_M)`.
pub fn magnetic_mirror_rt(delta_m: f64, gamma_m: f64) -> Result<(C64, C64)> {
    if !(gamma_m > 0.0) {
        return Err(Error::InvalidArgument("γ_M must be positive".into()));
    }
    let d = c(delta_m, gamma_m);
    Ok((c(0.0, gamma_m) / d, c(delta_m, 0.0) / d))
}
