//! Effective 1D electrodynamics of stacked, uniformly excited arrays.
//!
//! Layer `j` at `x_j` carries a uniform amplitude `ϱ_j` obeying
//! `ϱ̇_j = (iΔ_1D − γ_1D)ϱ_j + iR(x_j) − Σ_{ℓ≠j} γ_1D f_ℓ e^{i|x_j−x_ℓ|} ϱ_ℓ`
//! with `Δ_1D = Δ + Ω̃`. The optional factor `f_ℓ ≤ 1` scales the coherent
//! field a layer radiates (filling or Purcell factor).

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::infinite::{lattice_sums, DEFAULT_ETA};
use crate::kernel::green_tensor;
use crate::linalg::{self, CMat, CVec};
use crate::ode::{self, OdeOptions};
use crate::special::integrate_complex;
use crate::{c, Error, Result, C64, LAMBDA};

/// Transfer matrices refuse layers with `|1 + r|` below this.
pub const PERFECT_REFLECTION_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub x: f64,
    /// `γ_1D = γ + γ̃`
    pub gamma_1d: f64,
    /// Collective shift `Ω̃`; the layer resonance sits at `Δ = −Ω̃`.
    pub shift: f64,
    /// Fraction of the coherent amplitude radiated into the 1D channel.
    pub loss_factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    pub layers: Vec<Layer>,
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("stack needs at least one layer".into()));
        }
        if layers.windows(2).any(|w| !(w[1].x > w[0].x)) {
            return Err(Error::InvalidArgument("layer positions must increase strictly".into()));
        }
        for l in &layers {
            if !(l.gamma_1d > 0.0) || !(l.loss_factor > 0.0 && l.loss_factor <= 1.0) {
                return Err(Error::InvalidArgument("need γ_1D > 0 and 0 < f ≤ 1".into()));
            }
        }
        Ok(LayerStack { layers })
    }

    /// `n` identical lossless layers at `x = 0, d, 2d, …`.
    pub fn uniform(n: usize, d: f64, gamma_1d: f64, shift: f64) -> Result<Self> {
        Self::new((0..n).map(|j| Layer { x: j as f64 * d, gamma_1d, shift, loss_factor: 1.0 }).collect())
    }

    /// `n` identical square arrays of spacing `a` with the infinite-lattice
    /// in-plane couplings.
    pub fn square_arrays(n: usize, d: f64, a: f64) -> Result<Self> {
        let s = lattice_sums(a, [0.0, 0.0], DEFAULT_ETA * a, None)?;
        Self::uniform(n, d, 1.0 + s.gamma[1][1], s.omega[1][1])
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Message if some neighbouring layers are closer than `λ/2`, where the
    /// continuum description of each plane is unreliable.
    pub fn validity_warning(&self) -> Option<String> {
        let dmin = self.layers.windows(2).map(|w| w[1].x - w[0].x).fold(f64::INFINITY, f64::min);
        (dmin < 0.5 * LAMBDA)
            .then(|| format!("layer spacing {:.3}λ below 0.5λ: 1D reduction unreliable", dmin / LAMBDA))
    }

    /// Incident plane wave `R(x_j) = R₀ e^{ix_j}`.
    pub fn plane_wave(&self, r0: C64) -> CVec {
        self.layers.iter().map(|l| r0 * c(0.0, l.x).exp()).collect()
    }

    fn matrix(&self, delta: f64) -> CMat {
        let n = self.len();
        CMat::from_shape_fn((n, n), |(j, l)| {
            let (a, b) = (&self.layers[j], &self.layers[l]);
            if j == l {
                c(delta + a.shift, a.gamma_1d)
            } else {
                c(0.0, b.gamma_1d * b.loss_factor) * c(0.0, (a.x - b.x).abs()).exp()
            }
        })
    }

    /// Steady amplitudes for drive `R(x_j)` at detuning `Δ`.
    pub fn steady_state(&self, delta: f64, drive: &CVec) -> Result<CVec> {
        if drive.len() != self.len() {
            return Err(Error::InvalidArgument("one drive value per layer expected".into()));
        }
        Ok(linalg::solve(&self.matrix(delta), drive)?.mapv(|x| -x))
    }

    /// Integrates the layer equations from `rho0`.
    pub fn evolve<F>(&self, delta: f64, rho0: &CVec, times: &[f64], drive: F, opts: OdeOptions) -> Result<Vec<CVec>>
    where
        F: Fn(f64) -> CVec,
    {
        let k = self.matrix(delta).mapv(|x| x * c(0.0, 1.0));
        let out = ode::integrate(
            |t, y, dy| {
                let f = k.dot(&ndarray::ArrayView1::from(y));
                let r = drive(t);
                for i in 0..dy.len() {
                    dy[i] = f[i] + c(0.0, 1.0) * r[i];
                }
            },
            rho0.as_slice().expect("contiguous"),
            times,
            opts,
        )?;
        Ok(out.into_iter().map(Array1::from).collect())
    }

    /// `(r, t)` of the scattered plane waves `r e^{−ix}` and `t e^{ix}` for
    /// amplitudes driven by `R₀ e^{ix}`.
    pub fn rt_from_amplitudes(&self, rho: &CVec, r0: C64) -> (C64, C64) {
        let mut r = c(0.0, 0.0);
        let mut t = c(1.0, 0.0);
        for (l, p) in self.layers.iter().zip(rho.iter()) {
            let g = c(0.0, l.gamma_1d * l.loss_factor) * p / r0;
            r += g * c(0.0, l.x).exp();
            t += g * c(0.0, -l.x).exp();
        }
        (r, t)
    }

    /// Reflection amplitude of layer `j` alone.
    pub fn layer_r(&self, j: usize, delta: f64) -> C64 {
        let l = &self.layers[j];
        c(0.0, -l.gamma_1d * l.loss_factor) / c(delta + l.shift, l.gamma_1d)
    }

    /// `(r, t)` by transfer matrices, in the plane-wave convention of
    /// [`LayerStack::rt_from_amplitudes`].
    pub fn system_rt(&self, delta: f64) -> Result<(C64, C64)> {
        let mut m = layer_transfer(self.layer_r(0, delta))?;
        for j in 1..self.len() {
            let d = self.layers[j].x - self.layers[j - 1].x;
            m = layer_transfer(self.layer_r(j, delta))?.dot(&propagation(d).dot(&m));
        }
        let (t_loc, r_loc) = rt_of_transfer(&m)?;
        Ok(self.to_global(r_loc, t_loc))
    }

    /// As [`LayerStack::system_rt`] composing scattering matrices, which
    /// stays regular at `r = −1`.
    pub fn system_rt_star(&self, delta: f64) -> (C64, C64) {
        let mut s = Scattering::layer(self.layer_r(0, delta));
        for j in 1..self.len() {
            let d = self.layers[j].x - self.layers[j - 1].x;
            s = s.star(&Scattering::propagation(d)).star(&Scattering::layer(self.layer_r(j, delta)));
        }
        self.to_global(s.r, s.t)
    }

    fn to_global(&self, r_loc: C64, t_loc: C64) -> (C64, C64) {
        let x0 = self.layers[0].x;
        let x1 = self.layers[self.len() - 1].x;
        (r_loc * c(0.0, 2.0 * x0).exp(), t_loc * c(0.0, -(x1 - x0)).exp())
    }
}

/// Single-layer transfer matrix mapping local amplitudes `(right-, left-moving)`
/// on the left of the layer to those on the right:
/// `𝒯 = [[2r+1, r], [−r, 1]]/(r+1)`.
pub fn layer_transfer(r: C64) -> Result<CMat> {
    let s = 1.0 + r;
    if s.norm() < PERFECT_REFLECTION_TOL {
        return Err(Error::PerfectReflection(s.norm()));
    }
    let mut m = CMat::zeros((2, 2));
    m[[0, 0]] = (2.0 * r + 1.0) / s;
    m[[0, 1]] = r / s;
    m[[1, 0]] = -r / s;
    m[[1, 1]] = 1.0 / s;
    Ok(m)
}

/// Free propagation over `d`: `diag(e^{id}, e^{−id})`.
pub fn propagation(d: f64) -> CMat {
    let mut m = CMat::zeros((2, 2));
    m[[0, 0]] = c(0.0, d).exp();
    m[[1, 1]] = c(0.0, -d).exp();
    m
}

/// `(t, r)` of a composed transfer matrix: `t = 1/[𝒯⁻¹]₁₁`,
/// `r = [𝒯⁻¹]₂₁/[𝒯⁻¹]₁₁`, referred to the end layers.
pub fn rt_of_transfer(m: &CMat) -> Result<(C64, C64)> {
    let det = m[[0, 0]] * m[[1, 1]] - m[[0, 1]] * m[[1, 0]];
    if !(det.norm() > 0.0) {
        return Err(Error::IllConditioned(0.0));
    }
    let inv11 = m[[1, 1]] / det;
    let inv21 = -m[[1, 0]] / det;
    if inv11.norm() < 1e-300 {
        return Err(Error::IllConditioned(inv11.norm()));
    }
    Ok((1.0 / inv11, inv21 / inv11))
}

/// Two-port scattering matrix `[[t, r'], [r, t']]` (local amplitudes).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scattering {
    /// Left-to-right transmission.
    pub t: C64,
    /// Reflection from the left.
    pub r: C64,
    /// Right-to-left transmission.
    pub tb: C64,
    /// Reflection from the right.
    pub rb: C64,
}

impl Scattering {
    pub fn layer(r: C64) -> Self {
        Scattering { t: 1.0 + r, r, tb: 1.0 + r, rb: r }
    }

    pub fn propagation(d: f64) -> Self {
        let e = c(0.0, d).exp();
        Scattering { t: e, r: c(0.0, 0.0), tb: e, rb: c(0.0, 0.0) }
    }

    /// Redheffer star product: `self` followed by `next` along `+x`.
    pub fn star(&self, next: &Scattering) -> Scattering {
        let den = 1.0 - self.rb * next.r;
        Scattering {
            t: next.t * self.t / den,
            r: self.r + self.tb * next.r * self.t / den,
            tb: self.tb * next.tb / den,
            rb: next.rb + next.t * self.rb * next.tb / den,
        }
    }
}

/// Resonance shift of peak transmission through a stack,
/// `δ ≈ cot(2kd) γ_1D/2`.
pub fn resonance_shift_estimate(d: f64, gamma_1d: f64) -> f64 {
    gamma_1d / (2.0 * (2.0 * d).tan())
}

/// `F_n(x) = ∫_{|x|}^∞ e^{iR}/R^n dR`, evaluated along `R = |x| + is`.
pub fn f_integral(n: i32, x: f64) -> C64 {
    let ax = x.abs();
    let e = c(0.0, ax).exp();
    // e^{−s} decays below 1e-17 by s = 40
    let v = integrate_complex(0.0, 40.0, 80, 20, |s| (-s).exp() / c(ax, s).powi(n));
    c(0.0, 1.0) * e * v
}

/// `F_{n+1} = (iF_n + e^{i|x|}/|x|^n)/n`.
pub fn f_recursion(f_n: C64, n: i32, x: f64) -> C64 {
    let ax = x.abs();
    (c(0.0, 1.0) * f_n + c(0.0, ax).exp() / ax.powi(n)) / n as f64
}

/// Outcome of the planar-field consistency checks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanarChecks {
    pub x: f64,
    /// `∫ d²ρ G_yy` over the tapered disk.
    pub disk_integral: C64,
    /// `(i/2) e^{i|x|}`
    pub disk_expected: C64,
    pub disk_rel_err: f64,
    /// Largest deviation of recursion-built `F_2 … F_4` from quadrature.
    pub recursion_err: f64,
    /// Deviation of the `F_n` combination from `(i/2)e^{i|x|}`.
    pub identity_err: f64,
    /// Relative deviation of `1 + γ̃_yy` from `3π/a²`.
    pub gamma_1d_rel_err: f64,
}

impl PlanarChecks {
    pub fn pass(&self) -> bool {
        self.disk_rel_err < 1e-3
            && self.recursion_err < 1e-8
            && self.identity_err < 1e-8
            && self.gamma_1d_rel_err < 1e-4
    }
}

/// Disk integral of the scattered field of a unit-density sheet of
/// `y`-dipoles at `(x, 0, 0)` out to `rho_max`, with a raised-cosine
/// convergence factor over the outer half of the disk.
pub fn disk_integral(x: f64, rho_max: f64) -> Result<C64> {
    if !(x.abs() > 0.0) || !(rho_max > 2.0 * x.abs()) {
        return Err(Error::InvalidArgument("need x ≠ 0 and ρ_max > 2|x|".into()));
    }
    let nphi = 16;
    let taper_start = 0.5 * rho_max;
    let panels = (rho_max / std::f64::consts::PI).ceil() as usize;
    let mut err = None;
    let v = integrate_complex(0.0, rho_max, panels, 16, |rho| {
        let w = if rho < taper_start {
            1.0
        } else {
            0.5 * (1.0 + (std::f64::consts::PI * (rho - taper_start) / (rho_max - taper_start)).cos())
        };
        let mut s = c(0.0, 0.0);
        for k in 0..nphi {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / nphi as f64;
            match green_tensor([x, -rho * phi.cos(), -rho * phi.sin()]) {
                Ok(g) => s += g[1][1],
                Err(e) => err = Some(e),
            }
        }
        s * (2.0 * std::f64::consts::PI / nphi as f64) * rho * w
    });
    match err {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// Runs the planar-field checks at distance `x` for lattice spacing `a`.
pub fn planar_checks(x: f64, a: f64, rho_max: f64) -> Result<PlanarChecks> {
    let disk = disk_integral(x, rho_max)?;
    let ax = x.abs();
    let expected = c(0.0, 0.5) * c(0.0, ax).exp();
    let quad: Vec<C64> = (0..=4).map(|n| f_integral(n, x)).collect();
    let mut f = quad[1];
    let mut rec = vec![c(0.0, 0.0), quad[1]];
    for n in 1..4 {
        f = f_recursion(f, n, x);
        rec.push(f);
    }
    let recursion_err = (2..=4).map(|n| (rec[n] - quad[n]).norm() / quad[n].norm()).fold(0.0, f64::max);
    let x2 = x * x;
    let i = c(0.0, 1.0);
    let comb = (quad[2] - i * quad[1] - 3.0 * x2 * quad[4] + 3.0 * i * x2 * quad[3] + quad[0] + x2 * quad[2]) / 4.0;
    let s = lattice_sums(a, [0.0, 0.0], DEFAULT_ETA * a, None)?;
    let g1d = 3.0 * std::f64::consts::PI / (a * a);
    Ok(PlanarChecks {
        x,
        disk_integral: disk,
        disk_expected: expected,
        disk_rel_err: (disk - expected).norm() / expected.norm(),
        recursion_err,
        identity_err: (comb - expected).norm(),
        gamma_1d_rel_err: ((1.0 + s.gamma[1][1]) / g1d - 1.0).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(m: &CMat) -> C64 {
        m[[0, 0]] * m[[1, 1]] - m[[0, 1]] * m[[1, 0]]
    }

    #[test]
    fn transfer_basics() {
        let id = layer_transfer(c(0.0, 0.0)).unwrap();
        assert!((id[[0, 0]] - 1.0).norm() < 1e-15 && id[[0, 1]].norm() < 1e-15);
        let m = layer_transfer(c(-0.3, 0.45)).unwrap();
        assert!((det(&m) - 1.0).norm() < 1e-12);
        let p = propagation(LAMBDA / 2.0);
        assert!((p[[0, 0]] + 1.0).norm() < 1e-12 && (p[[1, 1]] + 1.0).norm() < 1e-12);
        assert!(matches!(layer_transfer(c(-1.0, 1e-10)), Err(Error::PerfectReflection(_))));
    }

    #[test]
    fn single_layer() {
        let s = LayerStack::uniform(1, 1.0, 0.8, -0.2).unwrap();
        let (r, t) = s.system_rt(0.5).unwrap();
        let r1 = s.layer_r(0, 0.5);
        assert!((r - r1).norm() < 1e-14 && (t - 1.0 - r1).norm() < 1e-14);
        let rho = s.steady_state(0.5, &s.plane_wave(c(1.0, 0.0))).unwrap();
        let (r2, t2) = s.rt_from_amplitudes(&rho, c(1.0, 0.0));
        assert!((r2 - r).norm() < 1e-14 && (t2 - t).norm() < 1e-14);
    }

    #[test]
    fn transfer_matches_steady_state() {
        for n in [2, 3, 5] {
            let s = LayerStack::uniform(n, 0.63 * LAMBDA, 0.52, -0.37).unwrap();
            for delta in [-1.0, 0.1, 0.35, 0.9] {
                let rho = s.steady_state(delta, &s.plane_wave(c(1.0, 0.0))).unwrap();
                let (r1, t1) = s.rt_from_amplitudes(&rho, c(1.0, 0.0));
                let (r2, t2) = s.system_rt(delta).unwrap();
                let (r3, t3) = s.system_rt_star(delta);
                // inside the stop band the transfer product loses ~8 digits
                assert!((r1 - r2).norm() < 1e-8 && (t1 - t2).norm() < 1e-8);
                assert!((r1 - r3).norm() < 1e-10 && (t1 - t3).norm() < 1e-10);
                assert!((r1.norm_sqr() + t1.norm_sqr() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn star_product_handles_perfect_reflection() {
        let s = LayerStack::uniform(2, 0.7 * LAMBDA, 0.6, 0.2).unwrap();
        assert!(s.system_rt(-0.2).is_err());
        let (r, t) = s.system_rt_star(-0.2);
        assert!((r.norm() - 1.0).abs() < 1e-12 && t.norm() < 1e-12);
    }

    #[test]
    fn lossy_layers_lose_flux() {
        let mut s = LayerStack::uniform(3, 0.8 * LAMBDA, 0.6, 0.0).unwrap();
        for l in &mut s.layers {
            l.loss_factor = 0.9;
        }
        let rho = s.steady_state(0.1, &s.plane_wave(c(1.0, 0.0))).unwrap();
        let (r, t) = s.rt_from_amplitudes(&rho, c(1.0, 0.0));
        let (r2, t2) = s.system_rt(0.1).unwrap();
        assert!((r - r2).norm() < 1e-10 && (t - t2).norm() < 1e-10);
        assert!(r.norm_sqr() + t.norm_sqr() < 1.0);
    }

    #[test]
    fn evolve_reaches_steady_state() {
        let s = LayerStack::uniform(2, 0.75 * LAMBDA, 0.9, 0.0).unwrap();
        let drive = s.plane_wave(c(0.1, 0.0));
        let want = s.steady_state(0.2, &drive).unwrap();
        let out = s.evolve(0.2, &CVec::zeros(2), &[0.0, 60.0], |_| drive.clone(), OdeOptions::default()).unwrap();
        assert!((&out[1] - &want).iter().map(|x| x.norm()).fold(0.0, f64::max) < 1e-9);
    }

    #[test]
    fn f_integrals() {
        let x = LAMBDA;
        let f0 = f_integral(0, x);
        assert!((f0 - c(0.0, 1.0) * c(0.0, x).exp()).norm() < 1e-12);
        let mut f = f_integral(1, x);
        for n in 1..4 {
            f = f_recursion(f, n, x);
            let q = f_integral(n + 1, x);
            assert!((f - q).norm() / q.norm() < 1e-8);
        }
    }

    #[test]
    fn narrow_spacing_warns() {
        let s = LayerStack::uniform(2, 0.25 * LAMBDA, 1.0, 0.0).unwrap();
        assert!(s.validity_warning().is_some());
        let s = LayerStack::uniform(2, 0.5 * LAMBDA, 1.0, 0.0).unwrap();
        assert!(s.validity_warning().is_none());
    }
}
