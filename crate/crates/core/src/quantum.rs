//! Quantum master equation, quantum trajectories and photon correlations for
//! small arrays.
//!
//! Atom `j` has a ground level `0` and excited levels `1..=n_c` (one per
//! channel of the underlying [`LliSystem`]). Basis state `s` stores the level
//! of atom `j` as digit `N − 1 − j` of `s` in base `n_c + 1`.
//!
//! The generator is `ρ̇ = −i(H_eff ρ − ρ H_eff†) + 2 Σ_k J_k ρ J_k†` with
//! `H_eff = −Σ_ab (H + δH)_ab σ_a⁺σ_b⁻ − Σ_a (R_a σ_a⁺ + R_a* σ_a⁻)` and
//! `Σ_k J_k†J_k = Σ_ab γ_ab σ_a⁺σ_b⁻`, so that the single-excitation
//! amplitudes follow the coupled-dipole equations exactly.

use ndarray::Array1;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, CMat, CVec};
use crate::lli::LliSystem;
use crate::ode::{self, OdeOptions};
use crate::rng::stream;
use crate::special::gl_rule;
use crate::{c, CVec3, Error, Result, Vec3, C64, XI};

/// Largest Hilbert-space dimension for density-matrix evolution.
pub const QME_DIM_CAP: usize = 256;
/// Largest Hilbert-space dimension for trajectories.
pub const TRAJ_DIM_CAP: usize = 1 << 16;
/// Dense Liouvillians are used up to this many density-matrix entries.
pub const DENSE_LIOUVILLIAN_CAP: usize = 1024;
/// Ensemble density matrices are accumulated up to this dimension.
pub const RHO_DIM_CAP: usize = 256;

/// Compressed sparse-row operator.
#[derive(Clone, Debug)]
pub struct SparseOp {
    dim: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl SparseOp {
    fn from_triplets(dim: usize, mut t: Vec<(usize, usize, C64)>) -> Self {
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0; dim + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values: Vec<C64> = Vec::with_capacity(t.len());
        let mut last = None;
        for (r, col, v) in t {
            if last == Some((r, col)) {
                *values.last_mut().expect("entry") += v;
            } else {
                indices.push(col);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, col));
            }
        }
        for i in 0..dim {
            indptr[i + 1] += indptr[i];
        }
        SparseOp { dim, indptr, indices, values }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        (0..self.dim)
            .map(|i| (self.indptr[i]..self.indptr[i + 1]).map(|k| self.values[k] * x[self.indices[k]]).sum())
            .collect()
    }

    /// `self · m`.
    pub fn apply_left(&self, m: &CMat) -> CMat {
        let mut out = CMat::zeros(m.raw_dim());
        for i in 0..self.dim {
            let mut row = out.row_mut(i);
            for k in self.indptr[i]..self.indptr[i + 1] {
                row.scaled_add(self.values[k], &m.row(self.indices[k]));
            }
        }
        out
    }

    pub fn to_dense(&self) -> CMat {
        let mut m = CMat::zeros((self.dim, self.dim));
        for i in 0..self.dim {
            for k in self.indptr[i]..self.indptr[i + 1] {
                m[[i, self.indices[k]]] += self.values[k];
            }
        }
        m
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim)
            .map(|i| (self.indptr[i]..self.indptr[i + 1]).map(|k| self.values[k].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

fn hc(m: &CMat) -> CMat {
    m.t().mapv(|x| x.conj())
}

/// Jump operator families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpBasis {
    /// `J_k = √υ_k Σ_b u_kb* σ_b⁻` from the eigenvectors of `γ_ab`.
    SourceModes,
    /// Far-field detection directions: Gauss–Legendre in `cos θ` (polar axis
    /// `x̂`) times uniform `φ`, two transverse polarizations per node.
    Directional { n_theta: usize, n_phi: usize },
}

/// One jump channel: `J = Σ_a coef_a σ_a⁻`.
#[derive(Clone, Debug)]
pub struct Jump {
    pub coef: CVec,
    /// `(θ, φ, polarization)` for directional jumps.
    pub direction: Option<(f64, f64, usize)>,
    op: SparseOp,
}

/// Driven many-atom system in the full `(n_c + 1)^N` Hilbert space.
#[derive(Clone, Debug)]
pub struct QuantumSystem {
    pub n: usize,
    pub nc: usize,
    pub dim: usize,
    pub positions: Vec<Vec3>,
    pub channels: Vec<CVec3>,
    /// `γ_ab` over channels.
    pub gamma: CMat,
    pub h_eff: SparseOp,
    /// `pre[a][x]`: basis state mapped onto `x` by `σ_a⁻`.
    pre: Vec<Vec<Option<usize>>>,
    source: Vec<Jump>,
}

impl QuantumSystem {
    /// Builds the system for a constant drive `rabi` (one entry per channel).
    pub fn new(sys: &LliSystem, rabi: &CVec, dim_cap: usize) -> Result<Self> {
        let n = sys.n_atoms();
        let nc = sys.channels_per_atom();
        let m = n * nc;
        if rabi.len() != m {
            return Err(Error::InvalidArgument("drive length does not match the channel count".into()));
        }
        let levels = nc + 1;
        let dim = (levels as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
        if dim > dim_cap as u128 {
            return Err(Error::TooLarge { dim: dim.min(usize::MAX as u128) as usize, cap: dim_cap });
        }
        let dim = dim as usize;
        let place: Vec<usize> = (0..n).map(|j| levels.pow((n - 1 - j) as u32)).collect();
        let level = |s: usize, j: usize| (s / place[j]) % levels;
        let k = sys.total();
        let mut pre = vec![vec![None; dim]; m];
        let mut trip = Vec::new();
        for s in 0..dim {
            for l in 0..n {
                let d = level(s, l);
                if d == 0 {
                    // raising by the drive
                    for cch in 0..nc {
                        let a = l * nc + cch;
                        let to = s + (cch + 1) * place[l];
                        trip.push((to, s, -rabi[a]));
                        pre[a][s] = Some(to);
                    }
                    continue;
                }
                let b = l * nc + d - 1;
                let g = s - d * place[l];
                trip.push((g, s, -rabi[b].conj()));
                for j in 0..n {
                    for cch in 0..nc {
                        let a = j * nc + cch;
                        let to = if j == l {
                            g + (cch + 1) * place[l]
                        } else if level(s, j) == 0 {
                            g + (cch + 1) * place[j]
                        } else {
                            continue;
                        };
                        trip.push((to, s, -k[[a, b]]));
                    }
                }
            }
        }
        let h_eff = SparseOp::from_triplets(dim, trip);
        let mut q = QuantumSystem {
            n,
            nc,
            dim,
            positions: sys.geometry.positions.clone(),
            channels: sys.channels.clone(),
            gamma: sys.coupling.gamma.clone(),
            h_eff,
            pre,
            source: Vec::new(),
        };
        q.source = q.jumps(JumpBasis::SourceModes)?;
        Ok(q)
    }

    pub fn channels_total(&self) -> usize {
        self.n * self.nc
    }

    /// `J = Σ_a coef_a σ_a⁻` as a sparse operator.
    pub fn lowering_combination(&self, coef: &CVec) -> SparseOp {
        let mut trip = Vec::new();
        for (a, &ca) in coef.iter().enumerate() {
            if ca == c(0.0, 0.0) {
                continue;
            }
            for (x, p) in self.pre[a].iter().enumerate() {
                if let Some(from) = p {
                    trip.push((x, *from, ca));
                }
            }
        }
        SparseOp::from_triplets(self.dim, trip)
    }

    pub fn jumps(&self, basis: JumpBasis) -> Result<Vec<Jump>> {
        let m = self.channels_total();
        match basis {
            JumpBasis::SourceModes => {
                let (vals, vecs) = linalg::eigh(&self.gamma)?;
                Ok(vals
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v > 1e-14)
                    .map(|(k, &v)| {
                        let coef: CVec = vecs.column(k).mapv(|x| x.conj() * v.sqrt());
                        let op = self.lowering_combination(&coef);
                        Jump { coef, direction: None, op }
                    })
                    .collect())
            }
            JumpBasis::Directional { n_theta, n_phi } => {
                if n_theta < 2 || n_phi < 1 {
                    return Err(Error::InvalidArgument("directional grid too coarse".into()));
                }
                let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
                let mut out = Vec::with_capacity(2 * n_theta * n_phi);
                for (ct, w) in gl_rule(n_theta) {
                    let st = (1.0 - ct * ct).max(0.0).sqrt();
                    let theta = ct.acos();
                    for p in 0..n_phi {
                        let phi = dphi * p as f64;
                        let (sp, cp) = phi.sin_cos();
                        let n = [ct, st * cp, st * sp];
                        let pols = [[-st, ct * cp, ct * sp], [0.0, -sp, cp]];
                        let scale = (w * dphi / XI).sqrt() * XI / (4.0 * std::f64::consts::PI);
                        for (pi, e) in pols.iter().enumerate() {
                            let mut coef = CVec::zeros(m);
                            for (j, r) in self.positions.iter().enumerate() {
                                let ph = c(0.0, -(n[0] * r[0] + n[1] * r[1] + n[2] * r[2])).exp();
                                for (cc, ch) in self.channels.iter().enumerate() {
                                    // ε·(1 − n̂n̂)·ê = ε·ê for transverse ε
                                    let ee: C64 = (0..3).map(|i| ch[i] * e[i]).sum();
                                    coef[j * self.nc + cc] = ee * ph * scale;
                                }
                            }
                            let op = self.lowering_combination(&coef);
                            out.push(Jump { coef, direction: Some((theta, phi, pi)), op });
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// Relative mismatch of `Σ_k J_k†J_k v` and `Σ_ab γ_ab σ_a⁺σ_b⁻ v` on the
    /// given vectors.
    pub fn completeness_error(&self, jumps: &[Jump], vectors: &[CVec]) -> f64 {
        let m = self.channels_total();
        let mut worst: f64 = 0.0;
        for v in vectors {
            let vs = v.as_slice().expect("contiguous");
            let mut lhs = vec![c(0.0, 0.0); self.dim];
            for jmp in jumps {
                let jv = jmp.op.apply(vs);
                // J† = Σ_a coef_a* σ_a⁺
                for (a, ca) in jmp.coef.iter().enumerate() {
                    for (x, p) in self.pre[a].iter().enumerate() {
                        if let Some(from) = p {
                            lhs[*from] += ca.conj() * jv[x];
                        }
                    }
                }
            }
            let mut rhs = vec![c(0.0, 0.0); self.dim];
            for b in 0..m {
                let mut lb = vec![c(0.0, 0.0); self.dim];
                for (x, p) in self.pre[b].iter().enumerate() {
                    if let Some(from) = p {
                        lb[x] = vs[*from];
                    }
                }
                for a in 0..m {
                    let g = self.gamma[[a, b]];
                    if g == c(0.0, 0.0) {
                        continue;
                    }
                    for (x, p) in self.pre[a].iter().enumerate() {
                        if let Some(from) = p {
                            rhs[*from] += g * lb[x];
                        }
                    }
                }
            }
            let num: f64 = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            let den: f64 = rhs.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
            worst = worst.max(num / den);
        }
        worst
    }

    pub fn ground_state(&self) -> CVec {
        let mut v = CVec::zeros(self.dim);
        v[0] = c(1.0, 0.0);
        v
    }

    pub fn ground_density(&self) -> CMat {
        let mut r = CMat::zeros((self.dim, self.dim));
        r[[0, 0]] = c(1.0, 0.0);
        r
    }

    /// Basis index of the state with only channel `a` excited.
    pub fn single_excitation_index(&self, a: usize) -> usize {
        let (j, cch) = (a / self.nc, a % self.nc);
        (cch + 1) * (self.nc + 1).pow((self.n - 1 - j) as u32)
    }

    /// `ρ̇` for any (not necessarily Hermitian) `ρ`.
    pub fn rhs(&self, rho: &CMat) -> CMat {
        let i = c(0.0, 1.0);
        let a = self.h_eff.apply_left(rho);
        let b = hc(&self.h_eff.apply_left(&hc(rho)));
        let mut out = (&a - &b).mapv(|x| -i * x);
        for j in &self.source {
            let jr = j.op.apply_left(rho);
            let jrj = hc(&j.op.apply_left(&hc(&jr)));
            out.scaled_add(c(2.0, 0.0), &jrj);
        }
        out
    }

    pub fn evolve(&self, rho0: &CMat, times: &[f64], opts: OdeOptions) -> Result<Vec<CMat>> {
        self.check_qme()?;
        let d = self.dim;
        let flat: Vec<C64> = rho0.iter().copied().collect();
        let out = ode::integrate(
            |_, y, dy| {
                let r = CMat::from_shape_vec((d, d), y.to_vec()).expect("square");
                let f = self.rhs(&r);
                dy.copy_from_slice(f.as_slice().expect("standard layout"));
            },
            &flat,
            times,
            opts,
        )?;
        Ok(out.into_iter().map(|v| CMat::from_shape_vec((d, d), v).expect("square")).collect())
    }

    fn check_qme(&self) -> Result<()> {
        if self.dim > QME_DIM_CAP {
            return Err(Error::TooLarge { dim: self.dim, cap: QME_DIM_CAP });
        }
        Ok(())
    }

    /// Liouvillian on row-major `vec(ρ)`, if small enough.
    pub fn dense_liouvillian(&self) -> Option<CMat> {
        let d = self.dim;
        if d * d > DENSE_LIOUVILLIAN_CAP {
            return None;
        }
        let mut l = CMat::zeros((d * d, d * d));
        for k in 0..d * d {
            let mut e = CMat::zeros((d, d));
            e[[k / d, k % d]] = c(1.0, 0.0);
            let f = self.rhs(&e);
            for (i, v) in f.iter().enumerate() {
                l[[i, k]] = *v;
            }
        }
        Some(l)
    }

    /// Steady state with `‖ρ̇‖₁ < tol`: a direct null-space solve for small
    /// systems, long-time evolution otherwise.
    pub fn steady_state(&self, tol: f64, horizon: f64) -> Result<CMat> {
        self.check_qme()?;
        let d = self.dim;
        let residual = |r: &CMat| linalg::norm1(self.rhs(r).view());
        if let Some(mut l) = self.dense_liouvillian() {
            for k in 0..d * d {
                l[[0, k]] = if k % (d + 1) == 0 { c(1.0, 0.0) } else { c(0.0, 0.0) };
            }
            let mut rhs = CVec::zeros(d * d);
            rhs[0] = c(1.0, 0.0);
            let x = linalg::solve(&l, &rhs)?;
            let r = CMat::from_shape_vec((d, d), x.to_vec()).expect("square");
            let r = (&r + &hc(&r)).mapv(|x| x * 0.5);
            let res = residual(&r);
            if res < tol {
                return Ok(r);
            }
            return Err(Error::NotConverged(format!("steady-state residual {res:.3e}")));
        }
        let mut r = self.ground_density();
        let mut t = 0.0;
        let chunk = 10.0;
        loop {
            let res = residual(&r);
            if res < tol {
                return Ok(r);
            }
            if t >= horizon {
                return Err(Error::NotConverged(format!("QME residual {res:.3e} after t = {t}")));
            }
            r = self.evolve(&r, &[0.0, chunk], OdeOptions::default())?.pop().expect("two outputs");
            t += chunk;
        }
    }

    /// `⟨σ_a⁻⟩` for every channel.
    pub fn coherences(&self, rho: &CMat) -> CVec {
        let m = self.channels_total();
        CVec::from_shape_fn(m, |a| self.pre[a].iter().enumerate().filter_map(|(x, p)| p.map(|f| rho[[f, x]])).sum())
    }

    /// `C_ab = ⟨σ_a⁺σ_b⁻⟩`.
    pub fn correlations(&self, rho: &CMat) -> CMat {
        let m = self.channels_total();
        CMat::from_shape_fn((m, m), |(a, b)| {
            (0..self.dim)
                .filter_map(|x| match (self.pre[b][x], self.pre[a][x]) {
                    (Some(fb), Some(fa)) => Some(rho[[fb, fa]]),
                    _ => None,
                })
                .sum()
        })
    }

    /// Checks trace, Hermiticity and positivity of `ρ`.
    pub fn check_density(&self, rho: &CMat, tol: f64) -> Result<()> {
        let tr: C64 = rho.diag().sum();
        let herm = linalg::norm1((rho - &hc(rho)).view());
        let (ev, _) = linalg::eigh(&(rho + &hc(rho)).mapv(|x| x * 0.5))?;
        let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
        if (tr - 1.0).norm() > tol || herm > tol || min < -tol.max(1e-8) {
            return Err(Error::NotConverged(format!(
                "unphysical density matrix: trace {tr}, hermiticity {herm:.2e}, min eigenvalue {min:.2e}"
            )));
        }
        Ok(())
    }

    /// `e^{−iH_eff h} ψ` by a Taylor series (`‖H_eff‖h` must be modest).
    fn propagate(&self, psi: &[C64], h: f64) -> Vec<C64> {
        let mut out = psi.to_vec();
        let mut term = psi.to_vec();
        let n0: f64 = psi.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        for k in 1..60 {
            let ht = self.h_eff.apply(&term);
            let f = c(0.0, -h / k as f64);
            term = ht.into_iter().map(|x| x * f).collect();
            let tn: f64 = term.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            for (o, t) in out.iter_mut().zip(&term) {
                *o += t;
            }
            if tn <= 1e-17 * n0 {
                break;
            }
        }
        out
    }
}

/// Single-atom-like photon correlation `1 − e^{−3υτ/2}(cosh κυτ + (3/2κ) sinh κυτ)`
/// with `κ = ½(1 − 8I/I_s)^{1/2}`, `I/I_s` relative to the saturation
/// intensity of linewidth `υ`. Imaginary `κ` gives the oscillatory branch.
pub fn g2_analytic(tau: f64, i_ratio: f64, linewidth: f64) -> f64 {
    let x = linewidth * tau;
    let k2 = 0.25 * (1.0 - 8.0 * i_ratio);
    let (ch, sh_over_k) = if k2.abs() < 1e-14 {
        (1.0, x)
    } else if k2 > 0.0 {
        let k = k2.sqrt();
        ((k * x).cosh(), (k * x).sinh() / k)
    } else {
        let k = (-k2).sqrt();
        ((k * x).cos(), (k * x).sin() / k)
    };
    1.0 - (-1.5 * x).exp() * (ch + 1.5 * sh_over_k)
}

/// Far-field detection operator `A = Σ_a (ε*·f_a(n̂)) σ_a⁻` coefficients.
pub fn detection_coefficients(q: &QuantumSystem, direction: Vec3, polarization: CVec3) -> Result<CVec> {
    let nn = (direction[0].powi(2) + direction[1].powi(2) + direction[2].powi(2)).sqrt();
    if !(nn > 0.0) {
        return Err(Error::InvalidArgument("zero detection direction".into()));
    }
    let n = direction.map(|x| x / nn);
    let mut coef = CVec::zeros(q.channels_total());
    for (j, r) in q.positions.iter().enumerate() {
        let ph = c(0.0, -(n[0] * r[0] + n[1] * r[1] + n[2] * r[2])).exp() * (XI / (4.0 * std::f64::consts::PI));
        for (cc, ch) in q.channels.iter().enumerate() {
            let ne: C64 = (0..3).map(|i| ch[i] * n[i]).sum();
            let v: C64 = (0..3).map(|i| polarization[i].conj() * (ch[i] - ne * n[i])).sum();
            coef[j * q.nc + cc] = v * ph;
        }
    }
    Ok(coef)
}

/// `g₂(τ) = tr(A†A e^{𝓛τ}[Aρ_ss A†]) / ⟨A†A⟩²` by quantum regression.
pub fn g2_regression(q: &QuantumSystem, rho_ss: &CMat, coef: &CVec, taus: &[f64]) -> Result<Vec<f64>> {
    if taus.iter().any(|&t| !(t >= 0.0)) || taus.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("τ grid must be non-negative and non-decreasing".into()));
    }
    let a = q.lowering_combination(coef);
    let ad = a.to_dense();
    let n_op = hc(&ad).dot(&ad);
    let mean: f64 = n_op.dot(rho_ss).diag().sum().re;
    if !(mean > 1e-300) {
        return Err(Error::InvalidArgument("undefined g₂: zero mean detection rate".into()));
    }
    let start = hc(&a.apply_left(&hc(&a.apply_left(rho_ss))));
    let d = q.dim;
    let obs = |r: &CMat| n_op.dot(r).diag().sum().re / (mean * mean);
    let mut taus_full = vec![0.0];
    taus_full.extend_from_slice(taus);
    let states: Vec<CMat> = if let Some(l) = q.dense_liouvillian() {
        let mut out = Vec::with_capacity(taus.len());
        let mut v: CVec = start.iter().copied().collect();
        for w in taus_full.windows(2) {
            let dt = w[1] - w[0];
            if dt > 0.0 {
                v = linalg::expm(&l.mapv(|x| x * dt))?.dot(&v);
            }
            out.push(CMat::from_shape_vec((d, d), v.to_vec()).expect("square"));
        }
        out
    } else {
        let opts = OdeOptions { rtol: 1e-12, atol: 1e-14, ..OdeOptions::default() };
        let mut s = q.evolve(&start, &taus_full, opts)?;
        s.remove(0);
        s
    };
    Ok(states.iter().map(obs).collect())
}

/// Pair-correlation of click times from stationary records:
/// `g₂(τ_k) = pairs in [τ_k, τ_k + Δτ) / (n̄² T Δτ)` per record of length `T`.
pub fn g2_from_clicks(records: &[Vec<f64>], duration: f64, bin: f64, n_bins: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if records.len() < 2 || !(duration > 0.0) || !(bin > 0.0) {
        return Err(Error::InvalidArgument("need ≥ 2 records, positive duration and bin".into()));
    }
    let total: usize = records.iter().map(|r| r.len()).sum();
    let rate = total as f64 / (duration * records.len() as f64);
    if !(rate > 0.0) {
        return Err(Error::InvalidArgument("undefined g₂: no clicks".into()));
    }
    let per: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            let mut h = vec![0.0; n_bins];
            for (i, &t0) in r.iter().enumerate() {
                for &t1 in &r[i + 1..] {
                    let k = ((t1 - t0) / bin) as usize;
                    if k < n_bins {
                        h[k] += 1.0;
                    } else {
                        break;
                    }
                }
            }
            // pairs starting early enough for the whole bin to fit in the record
            (0..n_bins)
                .map(|k| {
                    let exposure = (duration - (k as f64 + 0.5) * bin).max(0.0);
                    h[k] / (rate * rate * exposure * bin)
                })
                .collect()
        })
        .collect();
    let n = per.len() as f64;
    let mean: Vec<f64> = (0..n_bins).map(|k| per.iter().map(|p| p[k]).sum::<f64>() / n).collect();
    let err: Vec<f64> = (0..n_bins)
        .map(|k| {
            let v = per.iter().map(|p| (p[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0);
            (v / n).sqrt()
        })
        .collect();
    Ok((mean, err))
}

#[derive(Clone, Copy, Debug)]
pub struct TrajectoryOptions {
    /// Upper bound on the propagation step.
    pub max_step: f64,
    /// Bound on the no-jump probability loss per step.
    pub max_jump_prob: f64,
    /// Trajectories per deterministic reduction chunk.
    pub chunk: usize,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        TrajectoryOptions { max_step: 0.1, max_jump_prob: 0.1, chunk: 64 }
    }
}

/// Directional photon detection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Click {
    pub trajectory: usize,
    pub t: f64,
    pub theta: f64,
    pub phi: f64,
    pub polarization: usize,
}

#[derive(Clone, Debug)]
pub struct TrajectoryEnsemble {
    pub times: Vec<f64>,
    pub n_traj: usize,
    /// Mean density matrix per output time (small systems only).
    pub rho: Option<Vec<CMat>>,
    /// Mean excited population per channel and output time.
    pub populations: Vec<Vec<f64>>,
    /// Standard error of the populations.
    pub populations_stderr: Vec<Vec<f64>>,
    pub clicks: Vec<Click>,
    pub jumps: usize,
}

struct Partial {
    rho: Option<Vec<CMat>>,
    pop: Vec<Vec<f64>>,
    pop2: Vec<Vec<f64>>,
    clicks: Vec<Click>,
    jumps: usize,
}

/// Waiting-time Monte-Carlo wave-function trajectories: the unnormalized
/// state decays under `H_eff` until its squared norm reaches a uniform
/// deviate, then jumps with `ψ → J_k ψ` chosen with weight `‖J_k ψ‖²`.
/// Trajectory `i` draws from stream `i` of `seed`.
pub fn run_trajectories(
    q: &QuantumSystem,
    psi0: &CVec,
    basis: JumpBasis,
    times: &[f64],
    n_traj: usize,
    seed: u64,
    opts: TrajectoryOptions,
) -> Result<TrajectoryEnsemble> {
    if q.dim > TRAJ_DIM_CAP {
        return Err(Error::TooLarge { dim: q.dim, cap: TRAJ_DIM_CAP });
    }
    if psi0.len() != q.dim || n_traj == 0 || times.is_empty() {
        return Err(Error::InvalidArgument("bad trajectory inputs".into()));
    }
    if times.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::InvalidArgument("output times must be non-decreasing".into()));
    }
    let jumps = q.jumps(basis)?;
    let directional = matches!(basis, JumpBasis::Directional { .. });
    let hn = q.h_eff.norm_inf();
    let gmax = linalg::eigh(&q.gamma)?.0.iter().copied().fold(0.0, f64::max);
    let h = opts.max_step.min(0.5 / hn.max(1e-12)).min(opts.max_jump_prob / (2.0 * gmax).max(1e-12));
    let keep_rho = q.dim <= RHO_DIM_CAP;
    let m = q.channels_total();
    let nt = times.len();
    let exc: Vec<Vec<usize>> = (0..m).map(|a| q.pre[a].iter().filter_map(|p| *p).collect()).collect();

    let one = |i: usize, acc: &mut Partial| -> Result<()> {
        let mut rng = stream(seed, i as u64);
        let n0: f64 = psi0.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let mut psi: Vec<C64> = psi0.iter().map(|x| x / n0).collect();
        let mut u: f64 = rng.gen();
        let mut t = times[0];
        let record = |psi: &[C64], k: usize, acc: &mut Partial| {
            let nn: f64 = psi.iter().map(|x| x.norm_sqr()).sum();
            if let Some(r) = acc.rho.as_mut() {
                let v = Array1::from_iter(psi.iter().map(|x| x / nn.sqrt()));
                for a in 0..q.dim {
                    for b in 0..q.dim {
                        r[k][[a, b]] += v[a] * v[b].conj();
                    }
                }
            }
            for a in 0..m {
                let p = exc[a].iter().map(|&s| psi[s].norm_sqr()).sum::<f64>() / nn;
                acc.pop[k][a] += p;
                acc.pop2[k][a] += p * p;
            }
        };
        record(&psi, 0, acc);
        for k in 1..nt {
            let target = times[k];
            while t < target {
                let step = h.min(target - t);
                let next = q.propagate(&psi, step);
                let n2: f64 = next.iter().map(|x| x.norm_sqr()).sum();
                if n2 > u {
                    psi = next;
                    t += step;
                    continue;
                }
                let (mut lo, mut hi) = (0.0, step);
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    let pm = q.propagate(&psi, mid);
                    if pm.iter().map(|x| x.norm_sqr()).sum::<f64>() > u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                psi = q.propagate(&psi, hi);
                t += hi;
                let cand: Vec<Vec<C64>> = jumps.iter().map(|j| j.op.apply(&psi)).collect();
                let w: Vec<f64> = cand.iter().map(|v| v.iter().map(|x| x.norm_sqr()).sum()).collect();
                let total: f64 = w.iter().sum();
                if !(total > 0.0) {
                    return Err(Error::Integration("jump with vanishing jump probability".into()));
                }
                let mut pick = rng.gen::<f64>() * total;
                let mut sel = w.len() - 1;
                for (idx, wi) in w.iter().enumerate() {
                    if pick < *wi {
                        sel = idx;
                        break;
                    }
                    pick -= wi;
                }
                let nrm = w[sel].sqrt();
                psi = cand[sel].iter().map(|x| x / nrm).collect();
                u = rng.gen();
                acc.jumps += 1;
                if directional {
                    if let Some((theta, phi, pol)) = jumps[sel].direction {
                        acc.clicks.push(Click { trajectory: i, t, theta, phi, polarization: pol });
                    }
                }
            }
            record(&psi, k, acc);
        }
        Ok(())
    };

    let new_partial = || Partial {
        rho: keep_rho.then(|| vec![CMat::zeros((q.dim, q.dim)); nt]),
        pop: vec![vec![0.0; m]; nt],
        pop2: vec![vec![0.0; m]; nt],
        clicks: Vec::new(),
        jumps: 0,
    };
    let chunk = opts.chunk.max(1);
    let n_chunks = n_traj.div_ceil(chunk);
    let parts: Vec<Partial> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let mut acc = new_partial();
            for i in ci * chunk..((ci + 1) * chunk).min(n_traj) {
                one(i, &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut tot = new_partial();
    for p in parts {
        if let (Some(a), Some(b)) = (tot.rho.as_mut(), p.rho) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += &y;
            }
        }
        for k in 0..nt {
            for a in 0..m {
                tot.pop[k][a] += p.pop[k][a];
                tot.pop2[k][a] += p.pop2[k][a];
            }
        }
        tot.clicks.extend(p.clicks);
        tot.jumps += p.jumps;
    }
    let nf = n_traj as f64;
    let populations: Vec<Vec<f64>> = tot.pop.iter().map(|r| r.iter().map(|x| x / nf).collect()).collect();
    let populations_stderr = tot
        .pop2
        .iter()
        .zip(&populations)
        .map(|(s2, mu)| {
            s2.iter().zip(mu).map(|(s, m)| ((s / nf - m * m).max(0.0) / (nf - 1.0).max(1.0)).sqrt()).collect()
        })
        .collect();
    Ok(TrajectoryEnsemble {
        times: times.to_vec(),
        n_traj,
        rho: tot.rho.map(|v| v.into_iter().map(|r| r.mapv(|x| x / nf)).collect()),
        populations,
        populations_stderr,
        clicks: tot.clicks,
        jumps: tot.jumps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Geometry;
    use crate::kernel::LevelScheme;
    use crate::semiclassical::{ObeSystem, SteadyOptions};
    use crate::LAMBDA;

    fn chain(n: usize, d: f64, scheme: LevelScheme) -> LliSystem {
        let pos = (0..n).map(|j| [0.0, 0.0, d * j as f64]).collect();
        LliSystem::new(Geometry::new(pos).unwrap(), scheme).unwrap()
    }

    fn y_dipole() -> LevelScheme {
        LevelScheme::two_level([0.0, 1.0, 0.0])
    }

    #[test]
    fn single_atom_decay() {
        let sys = chain(1, 1.0, y_dipole());
        let q = QuantumSystem::new(&sys, &CVec::zeros(1), QME_DIM_CAP).unwrap();
        let mut r = CMat::zeros((2, 2));
        r[[1, 1]] = c(1.0, 0.0);
        let out = q.evolve(&r, &[0.0, 0.5, 1.5], OdeOptions::default()).unwrap();
        for (s, t) in out.iter().zip([0.0f64, 0.5, 1.5]) {
            assert!((s[[1, 1]].re - (-2.0 * t).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn dicke_pair_decays_at_4_gamma() {
        let sys = chain(2, 1e-3, y_dipole());
        let q = QuantumSystem::new(&sys, &CVec::zeros(2), QME_DIM_CAP).unwrap();
        let mut psi = CVec::zeros(4);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        psi[q.single_excitation_index(0)] = c(s, 0.0);
        psi[q.single_excitation_index(1)] = c(s, 0.0);
        let r0 = CMat::from_shape_fn((4, 4), |(a, b)| psi[a] * psi[b].conj());
        let out = q.evolve(&r0, &[0.0, 0.2], OdeOptions::default()).unwrap();
        let pop = 1.0 - out[1][[0, 0]].re;
        assert!((pop - (-4.0 * 0.2f64).exp()).abs() < 1e-4, "{pop}");
    }

    #[test]
    fn generator_preserves_trace() {
        let sys = chain(2, 0.3 * LAMBDA, LevelScheme::ZeroToOne);
        let q = QuantumSystem::new(&sys, &CVec::from_elem(6, c(0.3, 0.1)), QME_DIM_CAP).unwrap();
        let mut rng = stream(1, 0);
        let a = CMat::from_shape_fn((16, 16), |_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let rho = &a + &hc(&a);
        assert!(q.rhs(&rho).diag().sum().norm() < 1e-12);
    }

    #[test]
    fn source_modes_are_complete() {
        let sys = chain(3, 0.2 * LAMBDA, y_dipole());
        let q = QuantumSystem::new(&sys, &CVec::zeros(3), QME_DIM_CAP).unwrap();
        let mut rng = stream(2, 0);
        let vs: Vec<CVec> =
            (0..4).map(|_| CVec::from_shape_fn(8, |_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))).collect();
        let src = q.jumps(JumpBasis::SourceModes).unwrap();
        assert!(q.completeness_error(&src, &vs) < 1e-8);
        let coarse = q.completeness_error(&q.jumps(JumpBasis::Directional { n_theta: 6, n_phi: 12 }).unwrap(), &vs);
        let fine = q.completeness_error(&q.jumps(JumpBasis::Directional { n_theta: 24, n_phi: 48 }).unwrap(), &vs);
        assert!(fine < coarse && fine < 1e-8, "{coarse} {fine}");
    }

    #[test]
    fn single_atom_steady_state_matches_bloch() {
        let sys = chain(1, 1.0, y_dipole());
        let mut sys = sys;
        sys.set_detuning(0.5);
        let r = c(0.7, 0.0);
        let q = QuantumSystem::new(&sys, &CVec::from(vec![r]), QME_DIM_CAP).unwrap();
        let ss = q.steady_state(1e-9, 100.0).unwrap();
        let den = 0.25 + 1.0 + 2.0 * 0.49;
        assert!((ss[[1, 1]].re - 0.49 / den).abs() < 1e-12);
        assert!((q.coherences(&ss)[0] - r * c(-0.5, 1.0) / den).norm() < 1e-12);
        let zero = QuantumSystem::new(&sys, &CVec::zeros(1), QME_DIM_CAP).unwrap();
        assert!(
            linalg::trace_distance(&zero.steady_state(1e-9, 100.0).unwrap(), &zero.ground_density()).unwrap() < 1e-12
        );
    }

    #[test]
    fn single_excitation_sector_follows_lli() {
        let mut sys = chain(3, 0.3 * LAMBDA, y_dipole());
        sys.set_detuning(0.2);
        let q = QuantumSystem::new(&sys, &CVec::zeros(3), QME_DIM_CAP).unwrap();
        let b0 = CVec::from(vec![c(0.6, 0.0), c(0.0, 0.5), c(-0.3, 0.2)]);
        let mut psi = CVec::zeros(8);
        for a in 0..3 {
            psi[q.single_excitation_index(a)] = b0[a];
        }
        let r0 = CMat::from_shape_fn((8, 8), |(a, b)| psi[a] * psi[b].conj());
        let times = [0.0, 0.7, 2.0];
        let opts = OdeOptions { rtol: 1e-12, atol: 1e-14, ..OdeOptions::default() };
        let rq = q.evolve(&r0, &times, opts).unwrap();
        let bl = sys.evolve(&b0, &times, |_| CVec::zeros(3), opts).unwrap();
        for (r, b) in rq.iter().zip(&bl) {
            for a in 0..3 {
                for d in 0..3 {
                    let want = b[a] * b[d].conj();
                    let got = r[[q.single_excitation_index(a), q.single_excitation_index(d)]];
                    assert!((got - want).norm() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn pair_matches_semiclassical_at_low_intensity() {
        let mut sys = chain(2, 0.2 * LAMBDA, y_dipole());
        sys.set_detuning(0.3);
        let r = crate::rabi_for_intensity(1e-4);
        let rabi = CVec::from_elem(2, c(r, 0.0));
        let q = QuantumSystem::new(&sys, &rabi, QME_DIM_CAP).unwrap();
        let sq = q.coherences(&q.steady_state(1e-12, 100.0).unwrap());
        let obe = ObeSystem::new(&sys);
        let sc = obe.steady_state(&rabi, None, SteadyOptions { tol: 1e-13, ..SteadyOptions::default() }).unwrap();
        for a in 0..2 {
            assert!((sq[a] - sc.coherence(a, 0)).norm() < 1e-2 * sq[a].norm());
        }
    }

    #[test]
    fn g2_closed_form_limits() {
        assert!(g2_analytic(0.0, 0.3, 1.0).abs() < 1e-15);
        assert!((g2_analytic(60.0, 0.3, 1.0) - 1.0).abs() < 1e-12);
        // κ = 0 limit
        for t in [0.1f64, 1.0, 3.0] {
            let want = 1.0 - (-1.5 * t).exp() * (1.0 + 1.5 * t);
            assert!((g2_analytic(t, 0.125, 1.0) - want).abs() < 1e-12);
            assert!((g2_analytic(t, 0.125 + 1e-9, 1.0) - want).abs() < 1e-8);
        }
        // collective rescaling
        assert_eq!(g2_analytic(2.0, 0.4, 0.5), g2_analytic(1.0, 0.4, 1.0));
    }

    #[test]
    fn g2_regression_single_atom() {
        let sys = chain(1, 1.0, y_dipole());
        for i_ratio in [0.05, 0.125, 1.0] {
            let r = crate::rabi_for_intensity(i_ratio);
            let q = QuantumSystem::new(&sys, &CVec::from(vec![c(r, 0.0)]), QME_DIM_CAP).unwrap();
            let ss = q.steady_state(1e-12, 100.0).unwrap();
            let coef = detection_coefficients(&q, [1.0, 0.0, 0.0], crate::real3([0.0, 1.0, 0.0])).unwrap();
            let taus: Vec<f64> = (0..=20).map(|k| 0.5 * k as f64).collect();
            let g = g2_regression(&q, &ss, &coef, &taus).unwrap();
            for (t, gv) in taus.iter().zip(&g) {
                assert!((gv - g2_analytic(*t, i_ratio, 1.0)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn trajectories_reproduce_decay() {
        let sys = chain(1, 1.0, y_dipole());
        let q = QuantumSystem::new(&sys, &CVec::zeros(1), QME_DIM_CAP).unwrap();
        let psi = CVec::from(vec![c(0.0, 0.0), c(1.0, 0.0)]);
        let times = [0.0f64, 0.25, 0.5, 1.0];
        let ens = run_trajectories(
            &q,
            &psi,
            JumpBasis::Directional { n_theta: 4, n_phi: 4 },
            &times,
            4000,
            9,
            TrajectoryOptions::default(),
        )
        .unwrap();
        for (k, t) in times.iter().enumerate() {
            let want = (-2.0 * t).exp();
            let err = ens.populations_stderr[k][0].max(1e-12);
            assert!((ens.populations[k][0] - want).abs() < 3.0 * err + 1e-12);
        }
        assert_eq!(ens.clicks.len(), ens.jumps);
        let again = run_trajectories(
            &q,
            &psi,
            JumpBasis::SourceModes,
            &times,
            300,
            9,
            TrajectoryOptions { chunk: 7, ..TrajectoryOptions::default() },
        )
        .unwrap();
        let other = run_trajectories(
            &q,
            &psi,
            JumpBasis::SourceModes,
            &times,
            300,
            9,
            TrajectoryOptions { chunk: 300, ..TrajectoryOptions::default() },
        )
        .unwrap();
        assert_eq!(again.populations, other.populations);
        assert!(again.clicks.is_empty());
    }

    #[test]
    fn dimension_cap_is_enforced() {
        let sys = chain(5, 0.3 * LAMBDA, LevelScheme::ZeroToOne);
        let err = QuantumSystem::new(&sys, &CVec::zeros(15), QME_DIM_CAP).unwrap_err();
        assert!(matches!(err, Error::TooLarge { dim: 1024, .. }));
    }
}
