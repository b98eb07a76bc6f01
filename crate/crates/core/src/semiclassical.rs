//! Nonlinear optical Bloch equations with light-mediated couplings
//! (mean-field factorization between atoms), and the uniform-mode model of
//! an infinite lattice: cubic steady states, stability, power broadening and
//! bistability.
//!
//! Per atom the state holds coherences `s_η = ⟨σ_η⁻⟩` and the excited block
//! `Q_νη = ⟨σ_ν⁺σ_η⁻⟩`. With `D` the Hermitian detuning block and
//! `R̄ = R + Σ_{other atoms} H s` the effective Rabi frequencies,
//!
//! `ṡ_η = i(D s)_η − γ s_η + iR̄_η(1 − tr Q) − i Σ_ν R̄_ν Q_νη`
//! `Q̇_νη = −2γQ_νη + i(Q D)_νη − i(D Q)_νη + iR̄_η s_ν* − iR̄_ν* s_η`.

use ndarray::{s, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::infinite::{lattice_sums, DEFAULT_ETA};
use crate::linalg::{self, CMat, CVec};
use crate::lli::LliSystem;
use crate::ode::{self, OdeOptions};
use crate::{c, Error, Result, C64, LAMBDA};

/// Mean-field OBE for a finite array.
#[derive(Clone, Debug)]
pub struct ObeSystem {
    n: usize,
    nc: usize,
    /// `H` with the single-atom blocks removed.
    hoff: CMat,
    /// Per-atom Hermitian detuning blocks.
    d: Vec<CMat>,
}

/// Flat OBE state: all coherences first, then the excited blocks atom by atom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObeState {
    pub n: usize,
    pub nc: usize,
    pub data: Vec<C64>,
}

impl ObeState {
    pub fn ground(n: usize, nc: usize) -> Self {
        ObeState { n, nc, data: vec![c(0.0, 0.0); n * (nc + nc * nc)] }
    }

    fn qoff(&self, j: usize) -> usize {
        self.n * self.nc + j * self.nc * self.nc
    }

    pub fn coherence(&self, j: usize, eta: usize) -> C64 {
        self.data[j * self.nc + eta]
    }

    pub fn coherences(&self) -> CVec {
        CVec::from(self.data[..self.n * self.nc].to_vec())
    }

    /// Excited-level block `Q` of atom `j`.
    pub fn block(&self, j: usize) -> CMat {
        let o = self.qoff(j);
        let nc = self.nc;
        Array2::from_shape_fn((nc, nc), |(a, b)| self.data[o + a * nc + b])
    }

    /// Excited population `tr Q` of every atom.
    pub fn populations(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| {
                let o = self.qoff(j);
                (0..self.nc).map(|a| self.data[o + a * self.nc + a].re).sum()
            })
            .collect()
    }

    /// Checks populations in `[0, 1]`, Hermitian blocks and positivity within
    /// `tol`.
    pub fn check_physical(&self, tol: f64) -> Result<()> {
        for j in 0..self.n {
            let q = self.block(j);
            let herm = (&q - &q.t().mapv(|x| x.conj())).iter().map(|x| x.norm()).fold(0.0, f64::max);
            if herm > tol {
                return Err(Error::NotConverged(format!("atom {j}: excited block not Hermitian ({herm:.2e})")));
            }
            let qh = (&q + &q.t().mapv(|x| x.conj())).mapv(|x| x * 0.5);
            let (ev, _) = linalg::eigh(&qh)?;
            let tr: f64 = ev.sum();
            if ev.iter().any(|&e| e < -tol) || tr > 1.0 + tol {
                return Err(Error::NotConverged(format!("atom {j}: unphysical populations {ev:?}")));
            }
        }
        Ok(())
    }
}

/// Controls for the steady-state search.
#[derive(Clone, Copy, Debug)]
pub struct SteadyOptions {
    /// Maximum integration time (units of `1/γ`).
    pub horizon: f64,
    /// Integration chunk between residual checks.
    pub chunk: f64,
    /// Target `max |dstate/dt|`.
    pub tol: f64,
    /// Residual below which Newton refinement takes over.
    pub newton_start: f64,
    /// Newton is skipped above this many real unknowns.
    pub newton_cap: usize,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        SteadyOptions { horizon: 2000.0, chunk: 20.0, tol: 1e-10, newton_start: 1e-3, newton_cap: 4000 }
    }
}

impl ObeSystem {
    pub fn new(sys: &LliSystem) -> Self {
        let n = sys.n_atoms();
        let nc = sys.channels_per_atom();
        let mut hoff = sys.h();
        let mut d = Vec::with_capacity(n);
        for j in 0..n {
            let r = j * nc..(j + 1) * nc;
            hoff.slice_mut(s![r.clone(), r.clone()]).fill(c(0.0, 0.0));
            d.push(sys.dh.slice(s![r.clone(), r]).to_owned());
        }
        ObeSystem { n, nc, hoff, d }
    }

    pub fn n_atoms(&self) -> usize {
        self.n
    }

    pub fn ground(&self) -> ObeState {
        ObeState::ground(self.n, self.nc)
    }

    /// Effective Rabi frequencies `R̄ = R + H_off s`.
    pub fn effective_rabi(&self, y: &[C64], rabi: &CVec) -> CVec {
        let m = self.n * self.nc;
        self.hoff.dot(&ArrayView1::from(&y[..m])) + rabi
    }

    pub fn rhs(&self, y: &[C64], rabi: &CVec, dy: &mut [C64]) {
        let (n, nc) = (self.n, self.nc);
        let m = n * nc;
        let rb = self.effective_rabi(y, rabi);
        let i = c(0.0, 1.0);
        for j in 0..n {
            let d = &self.d[j];
            let sj = &y[j * nc..(j + 1) * nc];
            let qo = m + j * nc * nc;
            let q = |a: usize, b: usize| y[qo + a * nc + b];
            let tr: C64 = (0..nc).map(|a| q(a, a)).sum();
            let rj = &rb.as_slice().expect("contiguous")[j * nc..(j + 1) * nc];
            for e in 0..nc {
                let mut v = -sj[e] + i * rj[e] * (1.0 - tr);
                for mu in 0..nc {
                    v += i * d[[e, mu]] * sj[mu] - i * rj[mu] * q(mu, e);
                }
                dy[j * nc + e] = v;
            }
            for a in 0..nc {
                for b in 0..nc {
                    let mut v = -2.0 * q(a, b) + i * rj[b] * sj[a].conj() - i * rj[a].conj() * sj[b];
                    for k in 0..nc {
                        v += i * q(a, k) * d[[k, b]] - i * d[[a, k]] * q(k, b);
                    }
                    dy[qo + a * nc + b] = v;
                }
            }
        }
    }

    pub fn evolve<F>(&self, y0: &ObeState, times: &[f64], rabi: F, opts: OdeOptions) -> Result<Vec<ObeState>>
    where
        F: Fn(f64) -> CVec,
    {
        let out = ode::integrate(|t, y, dy| self.rhs(y, &rabi(t), dy), &y0.data, times, opts)?;
        Ok(out.into_iter().map(|data| ObeState { n: self.n, nc: self.nc, data }).collect())
    }

    fn residual(&self, y: &[C64], rabi: &CVec) -> f64 {
        let mut dy = vec![c(0.0, 0.0); y.len()];
        self.rhs(y, rabi, &mut dy);
        dy.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    /// Steady state by time marching from `init` (ground state if `None`)
    /// followed by damped Newton iteration.
    pub fn steady_state(&self, rabi: &CVec, init: Option<&ObeState>, opts: SteadyOptions) -> Result<ObeState> {
        let mut y = init.cloned().unwrap_or_else(|| self.ground()).data;
        let mut t = 0.0;
        let mut res = self.residual(&y, rabi);
        let ode_opts = OdeOptions::default();
        while res > opts.tol {
            let real_dim = 2 * y.len();
            if res < opts.newton_start && real_dim <= opts.newton_cap {
                if let Ok(z) = self.newton(&y, rabi, opts.tol) {
                    y = z;
                    break;
                }
            }
            if t >= opts.horizon {
                return Err(Error::NotConverged(format!(
                    "OBE residual {res:.3e} after t = {t} (bistable or oscillating?)"
                )));
            }
            let out = ode::integrate(|_, y, dy| self.rhs(y, rabi, dy), &y, &[0.0, opts.chunk], ode_opts)?;
            y = out.into_iter().last().expect("two outputs");
            t += opts.chunk;
            res = self.residual(&y, rabi);
        }
        Ok(ObeState { n: self.n, nc: self.nc, data: y })
    }

    fn newton(&self, y0: &[C64], rabi: &CVec, tol: f64) -> Result<Vec<C64>> {
        let len = y0.len();
        let f = |y: &[C64]| {
            let mut dy = vec![c(0.0, 0.0); len];
            self.rhs(y, rabi, &mut dy);
            dy
        };
        let to_real = |v: &[C64]| -> Vec<f64> { v.iter().flat_map(|z| [z.re, z.im]).collect() };
        let mut y = y0.to_vec();
        for _ in 0..30 {
            let f0 = f(&y);
            let r0 = f0.iter().map(|x| x.norm()).fold(0.0, f64::max);
            if r0 < tol {
                return Ok(y);
            }
            let h = 1e-7;
            let cols: Vec<Vec<f64>> = (0..2 * len)
                .into_par_iter()
                .map(|k| {
                    let mut yp = y.clone();
                    if k % 2 == 0 {
                        yp[k / 2].re += h;
                    } else {
                        yp[k / 2].im += h;
                    }
                    let fp = f(&yp);
                    to_real(&fp).iter().zip(to_real(&f0)).map(|(a, b)| (a - b) / h).collect()
                })
                .collect();
            let jac = CMat::from_shape_fn((2 * len, 2 * len), |(i, k)| c(cols[k][i], 0.0));
            let rhs: CVec = to_real(&f0).into_iter().map(|x| c(-x, 0.0)).collect();
            let dx = linalg::solve(&jac, &rhs)?;
            let mut lambda = 1.0;
            loop {
                let trial: Vec<C64> = (0..len).map(|k| y[k] + c(dx[2 * k].re, dx[2 * k + 1].re) * lambda).collect();
                let r1 = f(&trial).iter().map(|x| x.norm()).fold(0.0, f64::max);
                if r1 < r0 || lambda < 1e-3 {
                    y = trial;
                    break;
                }
                lambda *= 0.5;
            }
        }
        let r = f(&y).iter().map(|x| x.norm()).fold(0.0, f64::max);
        if r < tol {
            Ok(y)
        } else {
            Err(Error::NotConverged(format!("Newton residual {r:.3e}")))
        }
    }
}

/// Cooperativity `C = (Ω̃ + iγ̃)/(2(Δ + iγ))`.
pub fn cooperativity(delta: f64, omega_t: f64, gamma_t: f64) -> C64 {
    c(omega_t, gamma_t) / (2.0 * c(delta, 1.0))
}

/// Steady state of a uniformly driven infinite lattice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformSolution {
    /// `|R̄|²`
    pub rbar2: f64,
    pub rbar: C64,
    pub rho_ge: C64,
    pub rho_ee: f64,
    /// `Z = 2ρ_ee − 1`
    pub z: f64,
    pub cooperativity: C64,
    /// All eigenvalues of the uniform-sector Jacobian have negative real part.
    pub stable: bool,
}

/// Roots of the cubic for `y = |R̄|²` and their stability, for detuning `Δ`,
/// incident Rabi frequency `R` and collective couplings `Ω̃`, `γ̃`.
pub fn uniform_steady_state(delta: f64, rabi: C64, omega_t: f64, gamma_t: f64) -> Result<Vec<UniformSolution>> {
    if !(gamma_t > -1.0) {
        return Err(Error::InvalidArgument("uniform model needs γ̃ > −γ".into()));
    }
    let r2 = rabi.norm_sqr();
    let cc = cooperativity(delta, omega_t, gamma_t);
    if r2 == 0.0 {
        return Ok(vec![UniformSolution {
            rbar2: 0.0,
            rbar: c(0.0, 0.0),
            rho_ge: c(0.0, 0.0),
            rho_ee: 0.0,
            z: -1.0,
            cooperativity: cc,
            stable: true,
        }]);
    }
    let d = delta * delta + 1.0;
    let u = d * (1.0 + 2.0 * cc);
    // 4y³ + 4(Re u − |R|²)y² + (|u|² − 4D|R|²)y − |R|²D² = 0
    let coef = [4.0, 4.0 * (u.re - r2), u.norm_sqr() - 4.0 * d * r2, -r2 * d * d];
    let mut roots = real_cubic_roots(coef)?;
    roots.retain(|&y| y > 0.0);
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1e-300));
    roots
        .into_iter()
        .map(|y| {
            // R̄ from R = R̄[(D + 2y) + 2CD]/(D + 2y)
            let rbar = rabi * (d + 2.0 * y) / ((d + 2.0 * y) + 2.0 * cc * d);
            let den = d + 2.0 * y;
            let rho_ge = rbar * c(-delta, 1.0) / den;
            let rho_ee = rbar.norm_sqr() / den;
            let stable = uniform_stable(delta, rabi, omega_t, gamma_t, rho_ge, rho_ee)?;
            Ok(UniformSolution {
                rbar2: rbar.norm_sqr(),
                rbar,
                rho_ge,
                rho_ee,
                z: 2.0 * rho_ee - 1.0,
                cooperativity: cc,
                stable,
            })
        })
        .collect()
}

/// Uniform-sector equations in real variables `(Re s, Im s, ρ_ee)`.
fn uniform_rhs(delta: f64, rabi: C64, om: f64, ga: f64, v: [f64; 3]) -> [f64; 3] {
    let s = c(v[0], v[1]);
    let rb = rabi + c(om, ga) * s;
    let i = c(0.0, 1.0);
    let ds = (i * delta - 1.0) * s + i * rb * (1.0 - 2.0 * v[2]);
    let dq = (-2.0 * v[2]) + (i * (rb * s.conj() - rb.conj() * s)).re;
    [ds.re, ds.im, dq]
}

fn uniform_stable(delta: f64, rabi: C64, om: f64, ga: f64, s: C64, q: f64) -> Result<bool> {
    let v0 = [s.re, s.im, q];
    let h = 1e-7;
    let mut jac = CMat::zeros((3, 3));
    for k in 0..3 {
        let mut vp = v0;
        let mut vm = v0;
        vp[k] += h;
        vm[k] -= h;
        let fp = uniform_rhs(delta, rabi, om, ga, vp);
        let fm = uniform_rhs(delta, rabi, om, ga, vm);
        for i in 0..3 {
            jac[[i, k]] = c((fp[i] - fm[i]) / (2.0 * h), 0.0);
        }
    }
    let (ev, _) = linalg::eig(&jac)?;
    Ok(ev.iter().all(|e| e.re < 0.0))
}

/// Real roots of `c₀y³ + c₁y² + c₂y + c₃`, polished by Newton steps.
fn real_cubic_roots(coef: [f64; 4]) -> Result<Vec<f64>> {
    let a = coef[0];
    let comp = CMat::from_shape_fn((3, 3), |(i, j)| {
        if i == 0 {
            c(-coef[j + 1] / a, 0.0)
        } else if i == j + 1 {
            c(1.0, 0.0)
        } else {
            c(0.0, 0.0)
        }
    });
    let (ev, _) = linalg::eig(&comp)?;
    let p = |y: f64| ((coef[0] * y + coef[1]) * y + coef[2]) * y + coef[3];
    let dp = |y: f64| (3.0 * coef[0] * y + 2.0 * coef[1]) * y + coef[2];
    let scale = ev.iter().map(|z| z.norm()).fold(1e-300, f64::max);
    Ok(ev
        .iter()
        .filter(|z| z.im.abs() <= 1e-7 * scale)
        .map(|z| {
            let mut y = z.re;
            for _ in 0..4 {
                let d = dp(y);
                if d != 0.0 {
                    y -= p(y) / d;
                }
            }
            y
        })
        .collect())
}

/// Power-broadened linewidth `γ[1 + (I/I_sat)(1 − 2bγ̃)]^{1/2}`,
/// `b = −Z/(γ − Zγ̃)`.
pub fn power_broadened_linewidth(i_ratio: f64, gamma_t: f64, z: f64) -> Result<f64> {
    if !(i_ratio >= 0.0) {
        return Err(Error::InvalidArgument("intensity must be non-negative".into()));
    }
    let b = -z / (1.0 - z * gamma_t);
    let arg = 1.0 + i_ratio * (1.0 - 2.0 * b * gamma_t);
    if !(arg >= 0.0) {
        return Err(Error::InvalidArgument("power-broadening argument negative".into()));
    }
    Ok(arg.sqrt())
}

/// `min_{y>0} N(y)/N(0)` with `N` the numerator of `d|R|²/d|R̄|²`; negative
/// exactly when the intensity response is bistable at this detuning.
pub fn bistability_margin(delta: f64, omega_t: f64, gamma_t: f64) -> f64 {
    let d = delta * delta + 1.0;
    let u = d * (1.0 + 2.0 * cooperativity(delta, omega_t, gamma_t));
    let uu = u.norm_sqr();
    // N = 8y³ + 12D y² + (8 Re u D − 2|u|²) y + |u|² D
    let c1 = 8.0 * u.re * d - 2.0 * uu;
    if c1 >= 0.0 {
        return 1.0;
    }
    let disc = 576.0 * d * d - 96.0 * c1;
    let y = (-24.0 * d + disc.sqrt()) / 48.0;
    let n = ((8.0 * y + 12.0 * d) * y + c1) * y + uu * d;
    n / (uu * d)
}

/// Point of a bistability map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BistabPoint {
    pub delta: f64,
    pub i_ratio: f64,
    pub roots: usize,
    pub stable: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BistabScan {
    pub a: f64,
    pub omega_t: f64,
    pub gamma_t: f64,
    pub points: Vec<BistabPoint>,
    /// One row per root: `(Δ, I/I_sat, root index, solution)`.
    pub branches: Vec<(f64, f64, usize, UniformSolution)>,
}

impl BistabScan {
    pub fn any_bistable(&self) -> bool {
        self.points.iter().any(|p| p.stable >= 2)
    }
}

/// Root count and stability over a `(Δ, I/I_sat)` grid for a square lattice
/// of spacing `a`, in-plane polarization.
pub fn bistability_scan(a: f64, deltas: &[f64], intensities: &[f64]) -> Result<BistabScan> {
    let s = lattice_sums(a, [0.0, 0.0], DEFAULT_ETA * a, None)?;
    let (om, ga) = (s.omega[1][1], s.gamma[1][1]);
    let grid: Vec<(f64, f64)> = deltas.iter().flat_map(|&d| intensities.iter().map(move |&i| (d, i))).collect();
    let rows: Vec<(BistabPoint, Vec<UniformSolution>)> = grid
        .par_iter()
        .map(|&(d, i)| {
            let sols = uniform_steady_state(d, c(crate::rabi_for_intensity(i), 0.0), om, ga)?;
            let stable = sols.iter().filter(|s| s.stable).count();
            Ok((BistabPoint { delta: d, i_ratio: i, roots: sols.len(), stable }, sols))
        })
        .collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(rows.len());
    let mut branches = Vec::new();
    for (p, sols) in rows {
        for (k, s) in sols.into_iter().enumerate() {
            branches.push((p.delta, p.i_ratio, k, s));
        }
        points.push(p);
    }
    Ok(BistabScan { a, omega_t: om, gamma_t: ga, points, branches })
}

/// Smallest bistability margin over detuning for spacing `a`.
pub fn min_margin(a: f64) -> Result<f64> {
    let s = lattice_sums(a, [0.0, 0.0], DEFAULT_ETA * a, None)?;
    let (om, ga) = (s.omega[1][1], s.gamma[1][1]);
    let span = 4.0 * (om.abs() + ga.abs() + 1.0);
    let n = 4000;
    let f = |d: f64| bistability_margin(d, om, ga);
    let step = 2.0 * span / n as f64;
    let (mut best, mut bd) = (f64::INFINITY, 0.0);
    for k in 0..=n {
        let d = -span + step * k as f64;
        let v = f(d);
        if v < best {
            best = v;
            bd = d;
        }
    }
    // golden-section refinement around the best grid point
    let (mut lo, mut hi) = (bd - step, bd + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if f(m1) < f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    Ok(best.min(f(0.5 * (lo + hi))))
}

/// Largest lattice spacing in `[a_lo, a_hi]` with a bistable detuning,
/// by bisection on the sign of [`min_margin`].
pub fn max_bistable_spacing(a_lo: f64, a_hi: f64, tol: f64) -> Result<f64> {
    if !(min_margin(a_lo)? < 0.0) {
        return Err(Error::InvalidArgument(format!("no bistability at a = {:.4}λ", a_lo / LAMBDA)));
    }
    if min_margin(a_hi)? < 0.0 {
        return Ok(a_hi);
    }
    let (mut lo, mut hi) = (a_lo, a_hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if min_margin(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Spacing bound `ka < (π/3)^{1/2}`.
pub fn bistability_bound() -> f64 {
    (std::f64::consts::PI / 3.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Geometry;
    use crate::kernel::LevelScheme;

    #[test]
    fn single_atom_saturation() {
        let g = Geometry::new(vec![[0.0; 3]]).unwrap();
        let mut sys = LliSystem::new(g, LevelScheme::two_level([0.0, 1.0, 0.0])).unwrap();
        sys.set_detuning(0.4);
        let obe = ObeSystem::new(&sys);
        let r = c(0.8, 0.0);
        let st = obe.steady_state(&CVec::from(vec![r]), None, SteadyOptions::default()).unwrap();
        let den = 0.16 + 1.0 + 2.0 * 0.64;
        assert!((st.populations()[0] - 0.64 / den).abs() < 1e-9);
        assert!((st.coherence(0, 0) - r * c(-0.4, 1.0) / den).norm() < 1e-9);
    }

    #[test]
    fn strong_drive_saturates() {
        let sols = uniform_steady_state(0.0, c(50.0, 0.0), 0.0, 0.0).unwrap();
        assert_eq!(sols.len(), 1);
        assert!((sols[0].rho_ee - 0.5).abs() < 1e-3);
    }

    #[test]
    fn linear_limit_matches_lli() {
        let g = Geometry::square_lattice(2, 2, 0.3 * LAMBDA).unwrap();
        let mut sys = LliSystem::new(g, LevelScheme::ZeroToOne).unwrap();
        sys.set_uniform_level_shifts(0.2, [0.1, 0.0, 0.3]).unwrap();
        let obe = ObeSystem::new(&sys);
        let m = sys.dim();
        let mut st = obe.ground();
        for k in 0..m {
            st.data[k] = c(1e-6 * (k as f64 + 1.0), -2e-6);
        }
        let rabi = CVec::from_shape_fn(m, |k| c(1e-6, 1e-6 * k as f64));
        let mut dy = vec![c(0.0, 0.0); st.data.len()];
        obe.rhs(&st.data, &rabi, &mut dy);
        let b = st.coherences();
        let lin = sys.total().dot(&b).mapv(|x| x * c(0.0, 1.0)) + rabi.mapv(|x| x * c(0.0, 1.0));
        for k in 0..m {
            assert!((dy[k] - lin[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn cubic_roots_satisfy_self_consistency() {
        for (d, r, om, ga) in [(0.3, 0.5, -1.2, 0.4), (-2.0, 3.0, 4.0, -0.5), (1.0, 0.01, 0.2, 0.1)] {
            for s in uniform_steady_state(d, c(r, 0.0), om, ga).unwrap() {
                let rb = c(r, 0.0) + c(om, ga) * s.rho_ge;
                assert!((rb - s.rbar).norm() < 1e-10);
                let v = uniform_rhs(d, c(r, 0.0), om, ga, [s.rho_ge.re, s.rho_ge.im, s.rho_ee]);
                assert!(v.iter().all(|x| x.abs() < 1e-10));
            }
        }
    }

    #[test]
    fn weak_drive_is_linear() {
        let sols = uniform_steady_state(0.3, c(1e-5, 0.0), -0.7, -0.2).unwrap();
        let want = -1e-5 / c(0.3 - 0.7, 0.8);
        assert!((sols[0].rho_ge - want).norm() < 1e-14);
    }

    #[test]
    fn cooperativity_example() {
        assert!((cooperativity(0.0, 0.0, 1.0) - 0.5).norm() < 1e-15);
    }

    #[test]
    fn power_broadening_limits() {
        assert_eq!(power_broadened_linewidth(0.0, -0.3, -0.8).unwrap(), 1.0);
        let w0 = power_broadened_linewidth(2.0, 0.0, -0.8).unwrap();
        assert!((w0 - 3f64.sqrt()).abs() < 1e-15);
        let ws = power_broadened_linewidth(2.0, -0.4, -0.8).unwrap();
        assert!(ws > w0);
    }

    #[test]
    fn dense_lattice_is_bistable() {
        let scan = bistability_scan(
            0.1 * LAMBDA,
            &(0..41).map(|k| -40.0 + 2.0 * k as f64).collect::<Vec<_>>(),
            &(0..30).map(|k| 10f64.powf(-1.0 + 0.15 * k as f64)).collect::<Vec<_>>(),
        )
        .unwrap();
        assert!(scan.any_bistable());
        assert!(min_margin(0.1 * LAMBDA).unwrap() < 0.0);
        assert!(min_margin(0.5 * LAMBDA).unwrap() > 0.0);
    }

    #[test]
    fn bistable_spacing_threshold() {
        let a = max_bistable_spacing(0.1 * LAMBDA, 0.3 * LAMBDA, 1e-5 * LAMBDA).unwrap();
        eprintln!(
            "max bistable spacing {:.5} lambda, bound {:.5}",
            a / LAMBDA,
            bistability_bound() / (2.0 * std::f64::consts::PI)
        );
        assert!(a / LAMBDA > 0.15 && a / LAMBDA < 0.18);
    }
}
