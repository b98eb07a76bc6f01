//! Coupled-dipole (low light intensity) response of finite arrays.
//!
//! Channel amplitudes `b` obey `ḃ = i(H + δH) b + iR`, where `R` holds the
//! incident Rabi frequencies and `δH` the (Hermitian) detunings and level
//! shifts.

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::Geometry;
use crate::kernel::{coupling_matrix, spherical_basis, Coupling, LevelScheme};
use crate::linalg::{self, dot_h, dot_t, CMat, CVec};
use crate::ode::{self, OdeOptions};
use crate::{c, normalize3, CVec3, Error, Result, Vec3, C64};

/// Incident light.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drive {
    /// `R(r) = amplitude · pol · e^{i k̂·r}`.
    PlaneWave { direction: Vec3, polarization: CVec3, amplitude: C64 },
    /// Paraxial Gaussian beam along `+x` with its focus in the `x = 0` plane.
    Gaussian { waist: f64, polarization: CVec3, amplitude: C64 },
}

impl Drive {
    pub fn plane_wave(direction: Vec3, polarization: Vec3, amplitude: f64) -> Result<Self> {
        let d = (direction[0].powi(2) + direction[1].powi(2) + direction[2].powi(2)).sqrt();
        if !(d > 0.0) {
            return Err(Error::InvalidArgument("zero propagation direction".into()));
        }
        let k = [direction[0] / d, direction[1] / d, direction[2] / d];
        let pol = normalize3(&crate::real3(polarization))?;
        let kp: f64 = (0..3).map(|i| k[i] * pol[i].re).sum();
        if kp.abs() > 1e-12 {
            return Err(Error::InvalidArgument("polarization not transverse".into()));
        }
        Ok(Drive::PlaneWave { direction: k, polarization: pol, amplitude: c(amplitude, 0.0) })
    }

    pub fn gaussian(waist: f64, polarization: Vec3, amplitude: f64) -> Result<Self> {
        if !(waist > 0.0) {
            return Err(Error::InvalidArgument("waist must be positive".into()));
        }
        let pol = normalize3(&crate::real3(polarization))?;
        if pol[0].norm() > 1e-12 {
            return Err(Error::InvalidArgument("polarization not transverse".into()));
        }
        Ok(Drive::Gaussian { waist, polarization: pol, amplitude: c(amplitude, 0.0) })
    }

    pub fn polarization(&self) -> CVec3 {
        match self {
            Drive::PlaneWave { polarization, .. } | Drive::Gaussian { polarization, .. } => *polarization,
        }
    }

    pub fn amplitude(&self) -> C64 {
        match self {
            Drive::PlaneWave { amplitude, .. } | Drive::Gaussian { amplitude, .. } => *amplitude,
        }
    }

    /// Scalar profile at `r` (unit amplitude).
    pub fn profile(&self, r: Vec3) -> C64 {
        match self {
            Drive::PlaneWave { direction, .. } => {
                c(0.0, direction[0] * r[0] + direction[1] * r[1] + direction[2] * r[2]).exp()
            }
            Drive::Gaussian { waist, .. } => {
                let zr = waist * waist / 2.0;
                let x = r[0];
                let rho2 = r[1] * r[1] + r[2] * r[2];
                let w2 = waist * waist * (1.0 + (x / zr).powi(2));
                let gouy = (x / zr).atan();
                let curv = x / (2.0 * (x * x + zr * zr));
                let amp = waist / w2.sqrt() * (-rho2 / w2).exp();
                c(0.0, x - gouy + curv * rho2).exp() * amp
            }
        }
    }

    /// Vector field in Rabi-frequency units.
    pub fn field(&self, r: Vec3) -> CVec3 {
        let s = self.profile(r) * self.amplitude();
        self.polarization().map(|p| p * s)
    }

    /// `∫|profile|² d²ρ` over the focal plane, if finite.
    pub fn mode_area(&self) -> Option<f64> {
        match self {
            Drive::PlaneWave { .. } => None,
            Drive::Gaussian { waist, .. } => Some(std::f64::consts::PI * waist * waist / 2.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LliSystem {
    pub geometry: Geometry,
    pub scheme: LevelScheme,
    pub channels: Vec<CVec3>,
    pub coupling: Coupling,
    /// Detunings and level shifts, block diagonal per atom.
    pub dh: CMat,
}

impl LliSystem {
    pub fn new(geometry: Geometry, scheme: LevelScheme) -> Result<Self> {
        let channels = scheme.channels()?;
        let coupling = coupling_matrix(&geometry, &scheme)?;
        let m = geometry.len() * channels.len();
        Ok(LliSystem { geometry, scheme, channels, coupling, dh: CMat::zeros((m, m)) })
    }

    pub fn n_atoms(&self) -> usize {
        self.geometry.len()
    }

    pub fn channels_per_atom(&self) -> usize {
        self.channels.len()
    }

    pub fn dim(&self) -> usize {
        self.n_atoms() * self.channels_per_atom()
    }

    /// Channel index `n_c·j + c`.
    pub fn index(&self, atom: usize, channel: usize) -> usize {
        atom * self.channels_per_atom() + channel
    }

    pub fn h(&self) -> CMat {
        self.coupling.h()
    }

    /// `H + δH`.
    pub fn total(&self) -> CMat {
        self.h() + &self.dh
    }

    /// Uniform detuning `Δ` for every level of every atom.
    pub fn set_detuning(&mut self, delta: f64) {
        self.dh.fill(c(0.0, 0.0));
        for i in 0..self.dim() {
            self.dh[[i, i]] = c(delta, 0.0);
        }
    }

    /// Detunings of atom `j`: sublevel `μ ∈ {−1, 0, +1}` is detuned by
    /// `Δ − μ δ_μ`, with `shifts = [δ_{−1}, δ_0, δ_{+1}]`.
    pub fn set_level_shifts(&mut self, j: usize, delta: f64, shifts: [f64; 3]) -> Result<()> {
        if j >= self.n_atoms() {
            return Err(Error::InvalidArgument(format!("atom {j} out of range")));
        }
        let nc = self.channels_per_atom();
        let o = j * nc;
        match self.scheme {
            LevelScheme::TwoLevel { .. } => {
                if shifts.iter().any(|&s| s != 0.0) {
                    return Err(Error::InvalidArgument("level shifts need three excited levels".into()));
                }
                self.dh[[o, o]] = c(delta, 0.0);
            }
            LevelScheme::ZeroToOne => {
                let basis = spherical_basis();
                for a in 0..3 {
                    for b in 0..3 {
                        let mut s = c(0.0, 0.0);
                        for (k, e) in basis.iter().enumerate() {
                            let mu = k as f64 - 1.0;
                            let det = delta - mu * shifts[k];
                            s += e[a] * e[b].conj() * det;
                        }
                        self.dh[[o + a, o + b]] = s;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn set_uniform_level_shifts(&mut self, delta: f64, shifts: [f64; 3]) -> Result<()> {
        for j in 0..self.n_atoms() {
            self.set_level_shifts(j, delta, shifts)?;
        }
        Ok(())
    }

    /// Incident Rabi frequencies per channel, `R_{jc} = ê_c*·E(r_j)`.
    pub fn rabi(&self, drive: &Drive) -> CVec {
        let nc = self.channels_per_atom();
        let mut r = CVec::zeros(self.dim());
        for (j, p) in self.geometry.positions.iter().enumerate() {
            let e = drive.field(*p);
            for (a, ch) in self.channels.iter().enumerate() {
                r[j * nc + a] = (0..3).map(|i| ch[i].conj() * e[i]).sum();
            }
        }
        r
    }

    /// Dipole vector of atom `j`, `Σ_c ê_c b_{jc}`.
    pub fn dipole(&self, b: &CVec, j: usize) -> CVec3 {
        let nc = self.channels_per_atom();
        let mut d = [c(0.0, 0.0); 3];
        for (a, ch) in self.channels.iter().enumerate() {
            for i in 0..3 {
                d[i] += ch[i] * b[j * nc + a];
            }
        }
        d
    }

    /// Steady state `b = −(H + δH)⁻¹ R`.
    pub fn steady_state(&self, rabi: &CVec) -> Result<CVec> {
        check_len(rabi.len(), self.dim())?;
        let k = self.total();
        match linalg::solve(&k, rabi) {
            Ok(x) => Ok(x.mapv(|v| -v)),
            Err(Error::IllConditioned(rcond)) => {
                let (vals, _) = linalg::eig(&k)?;
                let eigenvalue = vals.iter().copied().min_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or_default();
                Err(Error::Resonant { rcond, eigenvalue })
            }
            Err(e) => Err(e),
        }
    }

    /// Steady states for a list of extra uniform detunings added to `δH`.
    pub fn steady_state_scan(&self, rabi: &CVec, deltas: &[f64]) -> Result<Vec<CVec>> {
        check_len(rabi.len(), self.dim())?;
        let res = Resolvent::new(&self.total())?;
        deltas.par_iter().map(|&d| res.apply(d, rabi)).collect()
    }

    /// Eigenmodes of `H` (δH excluded).
    pub fn eigenmodes(&self) -> Result<EigenSystem> {
        EigenSystem::new(&self.h())
    }

    /// Integrates `ḃ = i(H + δH)b + iR(t)` and returns `b` at `times`.
    pub fn evolve<F>(&self, b0: &CVec, times: &[f64], rabi: F, opts: OdeOptions) -> Result<Vec<CVec>>
    where
        F: Fn(f64) -> CVec + Sync,
    {
        check_len(b0.len(), self.dim())?;
        let k = self.total().mapv(|x| x * c(0.0, 1.0));
        let out = ode::integrate(
            |t, y, dy| {
                let yv = ArrayView1::from(y);
                let r = rabi(t);
                let f = k.dot(&yv);
                for i in 0..dy.len() {
                    dy[i] = f[i] + c(0.0, 1.0) * r[i];
                }
            },
            b0.as_slice().expect("contiguous"),
            times,
            opts,
        )?;
        Ok(out.into_iter().map(Array1::from).collect())
    }
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::InvalidArgument(format!("vector of length {got}, expected {want}")));
    }
    Ok(())
}

/// Fast repeated solves of `(K + Δ) b = −R` over many `Δ` through the
/// eigenbasis of `K`, with a residual check and LU fallback.
pub struct Resolvent {
    k: CMat,
    values: CVec,
    vectors: CMat,
    inverse: Option<CMat>,
}

impl Resolvent {
    pub fn new(k: &CMat) -> Result<Self> {
        let (values, vectors) = linalg::eig(k)?;
        let inverse = linalg::inverse(&vectors).ok();
        Ok(Resolvent { k: k.clone(), values, vectors, inverse })
    }

    pub fn apply(&self, delta: f64, rabi: &CVec) -> Result<CVec> {
        if let Some(vi) = &self.inverse {
            let cv = vi.dot(rabi);
            let y = Array1::from_iter(cv.iter().zip(self.values.iter()).map(|(x, l)| -x / (l + delta)));
            let b = self.vectors.dot(&y);
            // residual of (K + Δ) b + R
            let res = self.k.dot(&b) + b.mapv(|x| x * delta) + rabi;
            let scale = rabi.iter().map(|x| x.norm()).fold(0.0, f64::max).max(1e-300);
            if res.iter().map(|x| x.norm()).fold(0.0, f64::max) < 1e-9 * scale {
                return Ok(b);
            }
        }
        let mut a = self.k.clone();
        for i in 0..a.nrows() {
            a[[i, i]] += delta;
        }
        Ok(linalg::solve(&a, rabi)?.mapv(|x| -x))
    }
}

/// Collective eigenmodes `H v = λ v`, `λ = δ + iυ`, normalized by `vᵀv = 1`.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    pub values: CVec,
    pub vectors: CMat,
    /// Smallest `|vᵀv|/‖v‖²` before normalization; near zero at an
    /// exceptional point.
    pub min_self_overlap: f64,
    /// Eigenvectors coalesce (exceptional point).
    pub exceptional: bool,
}

/// Threshold on `|vᵀv|/‖v‖²` below which modes are flagged as coalescing.
pub const EP_THRESHOLD: f64 = 1e-6;

impl EigenSystem {
    pub fn new(h: &CMat) -> Result<Self> {
        let (values, mut vectors) = linalg::eig(h)?;
        let mut min_ov = f64::INFINITY;
        for mut col in vectors.columns_mut() {
            let nn: f64 = col.iter().map(|x| x.norm_sqr()).sum();
            let s = dot_t(col.view(), col.view());
            let ov = s.norm() / nn;
            min_ov = min_ov.min(ov);
            let scale = if ov > 1e-300 { s.sqrt() } else { c(nn.sqrt(), 0.0) };
            col.mapv_inplace(|x| x / scale);
        }
        Ok(EigenSystem { values, vectors, min_self_overlap: min_ov, exceptional: min_ov < EP_THRESHOLD })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Collective line shifts `δ_j`.
    pub fn shifts(&self) -> Vec<f64> {
        self.values.iter().map(|l| l.re).collect()
    }

    /// Collective linewidths `υ_j`.
    pub fn linewidths(&self) -> Vec<f64> {
        self.values.iter().map(|l| l.im).collect()
    }

    /// Mode weights `L_j = |v_jᵀb|² / Σ_ℓ |v_ℓᵀb|²`.
    pub fn occupation(&self, b: &CVec) -> Result<Vec<f64>> {
        let w: Vec<f64> = self.vectors.columns().into_iter().map(|v| dot_t(v, b.view()).norm_sqr()).collect();
        let s: f64 = w.iter().sum();
        if !(s > 0.0) {
            return Err(Error::InvalidArgument("zero state has no mode occupation".into()));
        }
        Ok(w.into_iter().map(|x| x / s).collect())
    }

    /// Mode with the largest normalized overlap `|v†u|²/(‖v‖²‖u‖²)` with `u`.
    pub fn best_overlap(&self, u: &CVec) -> (usize, f64) {
        let uu: f64 = u.iter().map(|x| x.norm_sqr()).sum();
        let mut best = (0, -1.0);
        for (j, v) in self.vectors.columns().into_iter().enumerate() {
            let vv: f64 = v.iter().map(|x| x.norm_sqr()).sum();
            let o = dot_h(v, u.view()).norm_sqr() / (vv * uu);
            if o > best.1 {
                best = (j, o);
            }
        }
        best
    }

    /// Undriven evolution `Σ_n (v_nᵀb₀) e^{iλ_n t} v_n`.
    pub fn propagate(&self, b0: &CVec, t: f64) -> CVec {
        let mut out = CVec::zeros(b0.len());
        for (v, l) in self.vectors.columns().into_iter().zip(self.values.iter()) {
            let cn = dot_t(v, b0.view()) * (c(0.0, 1.0) * l * t).exp();
            out.scaled_add(cn, &v);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::LAMBDA;

    fn two_level_y() -> LevelScheme {
        LevelScheme::two_level([0.0, 1.0, 0.0])
    }

    #[test]
    fn single_atom_steady_state() {
        let g = Geometry::new(vec![[0.0; 3]]).unwrap();
        let mut s = LliSystem::new(g, two_level_y()).unwrap();
        let delta = 0.7;
        s.set_detuning(delta);
        let r = CVec::from(vec![c(0.2, 0.1)]);
        let b = s.steady_state(&r).unwrap();
        let want = -r[0] / c(delta, 1.0);
        assert!((b[0] - want).norm() < 1e-14);
    }

    #[test]
    fn single_atom_eigenvalue() {
        let g = Geometry::new(vec![[0.0; 3]]).unwrap();
        let s = LliSystem::new(g, two_level_y()).unwrap();
        let e = s.eigenmodes().unwrap();
        assert!((e.values[0] - c(0.0, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn trace_identity_three_levels() {
        let g = Geometry::square_lattice(2, 3, 0.4 * LAMBDA).unwrap();
        let s = LliSystem::new(g, LevelScheme::ZeroToOne).unwrap();
        let e = s.eigenmodes().unwrap();
        let tr: C64 = e.values.iter().sum();
        assert!((tr - c(0.0, 18.0)).norm() < 1e-10);
    }

    #[test]
    fn decay_of_single_atom() {
        let g = Geometry::new(vec![[0.0; 3]]).unwrap();
        let s = LliSystem::new(g, two_level_y()).unwrap();
        let b0 = CVec::from(vec![c(1.0, 0.0)]);
        let times = [0.0, 1.0, 2.5];
        let out = s.evolve(&b0, &times, |_| CVec::zeros(1), OdeOptions::default()).unwrap();
        for (t, b) in times.iter().zip(&out) {
            assert!((b[0].norm() - (-t).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn superradiant_pair_decays_twice_as_fast() {
        let g = Geometry::new(vec![[0.0; 3], [0.0, 1e-3, 0.0]]).unwrap();
        let s = LliSystem::new(g, LevelScheme::two_level([1.0, 0.0, 0.0])).unwrap();
        let e = s.eigenmodes().unwrap();
        let mut w = e.linewidths();
        w.sort_by(f64::total_cmp);
        assert!((w[1] - 2.0).abs() < 1e-5 && w[0].abs() < 1e-5);
    }

    #[test]
    fn sublevel_shift_is_diagonal_in_spherical_basis() {
        let g = Geometry::new(vec![[0.0; 3]]).unwrap();
        let mut s = LliSystem::new(g, LevelScheme::ZeroToOne).unwrap();
        s.set_level_shifts(0, 0.5, [0.3, 0.0, 0.2]).unwrap();
        let basis = spherical_basis();
        let want = [0.5 + 0.3, 0.5, 0.5 - 0.2];
        for (k, e) in basis.iter().enumerate() {
            let ev = CVec::from(e.to_vec());
            let m = s.dh.dot(&ev);
            for i in 0..3 {
                assert!((m[i] - ev[i] * want[k]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn gaussian_profile_is_flat_phase_at_focus() {
        let d = Drive::gaussian(10.0, [0.0, 1.0, 0.0], 1.0).unwrap();
        let p = d.profile([0.0, 3.0, 4.0]);
        assert!(p.im.abs() < 1e-15);
        assert!((p.re - (-25.0f64 / 100.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn resolvent_matches_direct_solve() {
        let g = Geometry::square_lattice(3, 3, 0.3 * LAMBDA).unwrap();
        let mut s = LliSystem::new(g, LevelScheme::ZeroToOne).unwrap();
        s.set_uniform_level_shifts(0.0, [0.4, 0.0, 0.4]).unwrap();
        let drive = Drive::plane_wave([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 1.0).unwrap();
        let r = s.rabi(&drive);
        let scan = s.steady_state_scan(&r, &[0.3]).unwrap();
        let mut s2 = s.clone();
        for i in 0..s2.dim() {
            s2.dh[[i, i]] += 0.3;
        }
        let direct = s2.steady_state(&r).unwrap();
        let err: f64 = (&scan[0] - &direct).iter().map(|x| x.norm()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }
}
