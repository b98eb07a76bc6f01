//! Scattered-light observables: coherent fields, intensity decomposition,
//! photon scattering rates, transmission/reflection amplitudes, flux balance
//! and disorder-ensemble statistics.
//!
//! Fields are in Rabi-frequency units, so an atom with channel amplitude `b`
//! radiates `ξ G(r − r_j)·ê b`. Correlation tables hold
//! `C_ab = ⟨σ_a⁺σ_b⁻⟩` over the channel index of [`LliSystem`].

use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{sample_disordered, Geometry, MIN_SEPARATION};
use crate::kernel::{green_tensor, LevelScheme};
use crate::linalg::{CMat, CVec};
use crate::lli::{Drive, LliSystem};
use crate::rng::stream;
use crate::semiclassical::{ObeState, UniformSolution};
use crate::special::gl_rule;
use crate::{c, CVec3, Error, Result, Vec3, C64, XI};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Default solid-angle grid: Gauss–Legendre in `cos θ` times uniform `φ`.
pub const DEFAULT_QUAD: (usize, usize) = (48, 96);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub position: Vec3,
    pub field: CVec3,
    pub incoherent: Option<f64>,
}

fn add3(a: &mut CVec3, b: CVec3) {
    for i in 0..3 {
        a[i] += b[i];
    }
}

fn dotc(a: &CVec3, b: &CVec3) -> C64 {
    (0..3).map(|i| a[i].conj() * b[i]).sum()
}

/// Field `ξ G(r − r_j)·ê_c` radiated by each channel at `r`.
fn channel_fields(sys: &LliSystem, r: Vec3) -> Result<Vec<CVec3>> {
    let nc = sys.channels_per_atom();
    let mut out = Vec::with_capacity(sys.dim());
    for (j, p) in sys.geometry.positions.iter().enumerate() {
        let d = [r[0] - p[0], r[1] - p[1], r[2] - p[2]];
        if (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() < MIN_SEPARATION {
            return Err(Error::InvalidArgument(format!("field point coincides with atom {j}")));
        }
        let g = green_tensor(d)?;
        for a in 0..nc {
            let e = &sys.channels[a];
            let mut v = [c(0.0, 0.0); 3];
            for i in 0..3 {
                for k in 0..3 {
                    v[i] += g[i][k] * e[k] * XI;
                }
            }
            out.push(v);
        }
    }
    Ok(out)
}

/// Far-field amplitude per channel: `E ≈ f e^{ir}/r` with
/// `f = (ξ/4π)(1 − n̂n̂)·ê e^{−in̂·r_j}`.
fn channel_far_fields(positions: &[Vec3], channels: &[CVec3], n: Vec3) -> Vec<CVec3> {
    let mut out = Vec::with_capacity(positions.len() * channels.len());
    for p in positions {
        let ph = c(0.0, -(n[0] * p[0] + n[1] * p[1] + n[2] * p[2])).exp() * (XI / FOUR_PI);
        for e in channels {
            let ne: C64 = (0..3).map(|i| e[i] * n[i]).sum();
            out.push([0, 1, 2].map(|i| (e[i] - ne * n[i]) * ph));
        }
    }
    out
}

/// Coherent scattered field `⟨E_s(r)⟩ = Σ ξ G(r − r_j)·ê_c s_{jc}`.
pub fn coherent_field(sys: &LliSystem, s: &CVec, r: Vec3) -> Result<CVec3> {
    let g = channel_fields(sys, r)?;
    let mut e = [c(0.0, 0.0); 3];
    for (gi, si) in g.iter().zip(s.iter()) {
        add3(&mut e, gi.map(|x| x * si));
    }
    Ok(e)
}

/// Far-field amplitude `f(n̂)` of the coherent field, `⟨E_s⟩ ≈ f e^{ir}/r`.
pub fn far_field(sys: &LliSystem, s: &CVec, n: Vec3) -> CVec3 {
    let f = channel_far_fields(&sys.geometry.positions, &sys.channels, n);
    let mut e = [c(0.0, 0.0); 3];
    for (fi, si) in f.iter().zip(s.iter()) {
        add3(&mut e, fi.map(|x| x * si));
    }
    e
}

/// `C_ab = s_a* s_b`: products of one-body expectations.
pub fn factorized_correlations(s: &CVec) -> CMat {
    CMat::from_shape_fn((s.len(), s.len()), |(a, b)| s[a].conj() * s[b])
}

/// Semiclassical correlations: factorized between atoms, the excited block
/// `Q` within each atom.
pub fn semiclassical_correlations(state: &ObeState) -> CMat {
    let s = state.coherences();
    let mut cm = factorized_correlations(&s);
    let nc = state.nc;
    for j in 0..state.n {
        let q = state.block(j);
        for a in 0..nc {
            for b in 0..nc {
                cm[[j * nc + a, j * nc + b]] = q[[a, b]];
            }
        }
    }
    cm
}

/// Terms of `⟨E⁻·E⁺⟩` at a point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityTerms {
    /// `|E_in|²`
    pub incident: f64,
    /// `2 Re E_in*·⟨E_s⟩`
    pub interference: f64,
    /// `|⟨E_s⟩|²`
    pub coherent: f64,
    /// `Σ (C_ab − s_a* s_b) g_a*·g_b`
    pub incoherent: f64,
}

impl IntensityTerms {
    pub fn total(&self) -> f64 {
        self.incident + self.interference + self.coherent + self.incoherent
    }
}

/// Intensity split at `r` for fixed atom positions.
pub fn intensity_decomposition(
    sys: &LliSystem,
    drive: Option<&Drive>,
    s: &CVec,
    corr: &CMat,
    r: Vec3,
) -> Result<IntensityTerms> {
    let m = sys.dim();
    if s.len() != m || corr.dim() != (m, m) {
        return Err(Error::InvalidArgument("state size does not match the system".into()));
    }
    let g = channel_fields(sys, r)?;
    let mut es = [c(0.0, 0.0); 3];
    for (gi, si) in g.iter().zip(s.iter()) {
        add3(&mut es, gi.map(|x| x * si));
    }
    let ein = drive.map(|d| d.field(r)).unwrap_or([c(0.0, 0.0); 3]);
    let mut inc = c(0.0, 0.0);
    for a in 0..m {
        for b in 0..m {
            let fl = corr[[a, b]] - s[a].conj() * s[b];
            if fl != c(0.0, 0.0) {
                inc += fl * dotc(&g[a], &g[b]);
            }
        }
    }
    Ok(IntensityTerms {
        incident: dotc(&ein, &ein).re,
        interference: 2.0 * dotc(&ein, &es).re,
        coherent: dotc(&es, &es).re,
        incoherent: inc.re,
    })
}

/// Ensemble statistics of a field at one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleIntensity {
    pub mean_field: CVec3,
    /// `⟨|E|²⟩`
    pub mean_intensity: f64,
    /// `|⟨E⟩|²`
    pub coherent: f64,
    /// `⟨|E − ⟨E⟩|²⟩`, equal to `⟨|E|²⟩ − |⟨E⟩|²`.
    pub incoherent: f64,
    pub intensity_stderr: f64,
}

/// Mean field and coherent/incoherent split over realizations.
pub fn ensemble_intensity(samples: &[CVec3]) -> Result<EnsembleIntensity> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidArgument("ensemble needs at least two realizations".into()));
    }
    let nf = n as f64;
    let mut mean = [c(0.0, 0.0); 3];
    for e in samples {
        add3(&mut mean, e.map(|x| x / nf));
    }
    let ints: Vec<f64> = samples.iter().map(|e| dotc(e, e).re).collect();
    let mi = ints.iter().sum::<f64>() / nf;
    let var_i = ints.iter().map(|x| (x - mi).powi(2)).sum::<f64>() / (nf - 1.0);
    let incoherent = samples
        .iter()
        .map(|e| {
            let d = [0, 1, 2].map(|i| e[i] - mean[i]);
            dotc(&d, &d).re
        })
        .sum::<f64>()
        / nf;
    Ok(EnsembleIntensity {
        mean_field: mean,
        mean_intensity: mi,
        coherent: dotc(&mean, &mean).re,
        incoherent,
        intensity_stderr: (var_i / nf).sqrt(),
    })
}

/// Photon scattering rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    /// `n_s = 2 Σ γ_ab C_ab`
    pub total: f64,
    /// `2 Σ γ_ab s_a* s_b`
    pub coherent: f64,
    /// Single-atom incoherent part `2γ Σ_j (tr Q_j − |s_j|²)`.
    pub incoherent_saq: f64,
}

/// Rates from a correlation table and the dissipative couplings `γ_ab`
/// (`sys.coupling.gamma`).
pub fn scattering_rates(gamma: &CMat, corr: &CMat, s: &CVec, channels_per_atom: usize) -> Result<Rates> {
    let m = gamma.nrows();
    if corr.dim() != (m, m) || s.len() != m || m % channels_per_atom.max(1) != 0 {
        return Err(Error::InvalidArgument("rate inputs have inconsistent sizes".into()));
    }
    let mut total = c(0.0, 0.0);
    let mut coh = c(0.0, 0.0);
    for a in 0..m {
        for b in 0..m {
            total += gamma[[a, b]] * corr[[a, b]];
            coh += gamma[[a, b]] * s[a].conj() * s[b];
        }
    }
    let nc = channels_per_atom;
    let mut saq = 0.0;
    for j in 0..m / nc {
        for a in 0..nc {
            let k = j * nc + a;
            saq += corr[[k, k]].re - s[k].norm_sqr();
        }
    }
    Ok(Rates { total: 2.0 * total.re, coherent: 2.0 * coh.re, incoherent_saq: 2.0 * saq })
}

/// `∫ f(n̂) dΩ` with polar axis `x̂` over the `cos θ` intervals given,
/// `n_t` Gauss–Legendre nodes per interval and `n_p` azimuths.
pub fn sphere_integral<F>(f: F, cos_ranges: &[(f64, f64)], n_t: usize, n_p: usize) -> f64
where
    F: Fn(Vec3) -> f64 + Sync,
{
    let rule = gl_rule(n_t);
    let dphi = 2.0 * std::f64::consts::PI / n_p as f64;
    let nodes: Vec<(f64, f64)> = cos_ranges
        .iter()
        .flat_map(|&(lo, hi)| {
            rule.iter().map(move |&(x, w)| (0.5 * (hi + lo) + 0.5 * (hi - lo) * x, 0.5 * (hi - lo) * w))
        })
        .collect();
    // fixed summation order keeps results independent of thread count
    let rows: Vec<f64> = nodes
        .par_iter()
        .map(|&(ct, w)| {
            let st = (1.0 - ct * ct).max(0.0).sqrt();
            let s: f64 = (0..n_p)
                .map(|k| {
                    let ph = dphi * k as f64;
                    f([ct, st * ph.cos(), st * ph.sin()])
                })
                .sum();
            s * w * dphi
        })
        .collect();
    rows.iter().sum()
}

/// Total scattering rate by integrating the far-field intensity,
/// `n_s = (2/ξ) ∫ Σ C_ab f_a*·f_b dΩ`.
pub fn rate_by_quadrature(positions: &[Vec3], channels: &[CVec3], corr: &CMat, n_t: usize, n_p: usize) -> Result<f64> {
    let m = positions.len() * channels.len();
    if corr.dim() != (m, m) {
        return Err(Error::InvalidArgument("correlation table size mismatch".into()));
    }
    let f = |n: Vec3| {
        let ff = channel_far_fields(positions, channels, n);
        let mut s = c(0.0, 0.0);
        for a in 0..m {
            for b in 0..m {
                s += corr[[a, b]] * dotc(&ff[a], &ff[b]);
            }
        }
        s.re
    };
    Ok(2.0 / XI * sphere_integral(f, &[(-1.0, 1.0)], n_t, n_p))
}

/// Fraction of coherently scattered power inside cones of half-angle
/// `half_angle` around `±x̂`.
pub fn cone_power_fraction(sys: &LliSystem, s: &CVec, half_angle: f64, quad: (usize, usize)) -> Result<f64> {
    if !(half_angle > 0.0 && half_angle < std::f64::consts::FRAC_PI_2) {
        return Err(Error::InvalidArgument("half-angle must be in (0, π/2)".into()));
    }
    let cc = half_angle.cos();
    let p = |n: Vec3| {
        let e = far_field(sys, s, n);
        dotc(&e, &e).re
    };
    let inside = sphere_integral(p, &[(-1.0, -cc), (cc, 1.0)], quad.0, quad.1);
    let outside = sphere_integral(p, &[(-cc, cc)], quad.0, quad.1);
    let total = inside + outside;
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("no scattered power".into()));
    }
    Ok(inside / total)
}

/// Reflection and transmission amplitudes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Amplitudes {
    pub r: C64,
    pub t: C64,
}

/// `r`, `t` from the overlap of the coherent emission with the incident mode
/// `u` (forward) and its mirror image in `x` (backward):
/// `c = (iξ/2A) Σ_j u*(r_j) ê_in*·d_j / E₀` with `A = ∫|u|² d²ρ`. A Gaussian
/// drive supplies its own mode area; a plane wave needs `area` (for a finite
/// array, the top-hat area `N a²`).
pub fn mode_overlap_rt(sys: &LliSystem, b: &CVec, drive: &Drive, area: Option<f64>) -> Result<Amplitudes> {
    let a = match (drive.mode_area(), area) {
        (_, Some(a)) | (Some(a), None) => a,
        (None, None) => return Err(Error::InvalidArgument("plane-wave drive needs a mode area".into())),
    };
    if !(a > 0.0) {
        return Err(Error::InvalidArgument("mode area must be positive".into()));
    }
    let e0 = drive.amplitude();
    if e0 == c(0.0, 0.0) {
        return Err(Error::InvalidArgument("zero incident overlap".into()));
    }
    let pol = drive.polarization();
    let mut fwd = c(0.0, 0.0);
    let mut bwd = c(0.0, 0.0);
    for (j, p) in sys.geometry.positions.iter().enumerate() {
        let d = sys.dipole(b, j);
        let ed = dotc(&pol, &d);
        fwd += drive.profile(*p).conj() * ed;
        bwd += drive.profile([-p[0], p[1], p[2]]).conj() * ed;
    }
    let pre = c(0.0, XI / (2.0 * a)) / e0;
    Ok(Amplitudes { r: pre * bwd, t: 1.0 + pre * fwd })
}

/// `r`, `t` as ratios of polarization-projected far fields integrated over
/// collection cones of half-angle `half_angle` around `±x̂`. The incident far
/// field of a Gaussian drive is `−i cos θ (w²/2) e^{−w² sin²θ/4} E₀ ê`.
pub fn collected_rt(
    sys: &LliSystem,
    b: &CVec,
    drive: &Drive,
    half_angle: f64,
    quad: (usize, usize),
) -> Result<Amplitudes> {
    let Drive::Gaussian { waist, polarization, amplitude } = drive else {
        return Err(Error::InvalidArgument("collected r/t needs a finite (Gaussian) beam".into()));
    };
    if !(half_angle > 0.0 && half_angle <= std::f64::consts::FRAC_PI_2) {
        return Err(Error::InvalidArgument("half-angle must be in (0, π/2]".into()));
    }
    let cc = half_angle.cos();
    let w2 = waist * waist;
    let inc = |n: Vec3| {
        let st2 = 1.0 - n[0] * n[0];
        c(0.0, -n[0] * w2 / 2.0 * (-w2 * st2 / 4.0).exp()) * amplitude
    };
    let proj = |n: Vec3| dotc(polarization, &far_field(sys, b, n));
    let cint = |f: &(dyn Fn(Vec3) -> C64 + Sync), lo: f64, hi: f64| {
        c(
            sphere_integral(|n| f(n).re, &[(lo, hi)], quad.0, quad.1),
            sphere_integral(|n| f(n).im, &[(lo, hi)], quad.0, quad.1),
        )
    };
    let norm = cint(&inc, cc, 1.0);
    if norm.norm() == 0.0 {
        return Err(Error::InvalidArgument("zero incident overlap".into()));
    }
    let fwd = cint(&proj, cc, 1.0);
    let bwd = cint(&proj, -1.0, -cc);
    Ok(Amplitudes { r: bwd / norm, t: 1.0 + fwd / norm })
}

/// Normalized fluxes of the uniform-mode model beyond low intensity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxReport {
    pub r: C64,
    pub reflectance: f64,
    pub transmittance: f64,
    pub incoherent: f64,
    /// `1 − R − T − F_inc`
    pub residual: f64,
}

/// Reflectance, transmittance and incoherent flux of a uniform steady state:
/// `R = Z²(γ+γ̃)²/Λ`, `1 − T = −Z(γ+γ̃)[2(γ−Zγ̃) + Z(γ+γ̃)]/Λ` with
/// `Λ = (Δ − ZΩ̃)² + (γ − Zγ̃)²`, and
/// `F_inc = 2γ(γ+γ̃)(ρ_ee − |ρ_ge|²)/|R|²`.
pub fn rt_beyond_lli(delta: f64, omega_t: f64, gamma_t: f64, rabi: C64, sol: &UniformSolution) -> Result<FluxReport> {
    let r2 = rabi.norm_sqr();
    if !(r2 > 0.0) {
        return Err(Error::InvalidArgument("flux normalization needs a nonzero drive".into()));
    }
    let z = sol.z;
    let g1 = 1.0 + gamma_t;
    let den = (delta - z * omega_t).powi(2) + (1.0 - z * gamma_t).powi(2);
    let reflectance = z * z * g1 * g1 / den;
    let extinction = -z * g1 * (2.0 * (1.0 - z * gamma_t) + z * g1) / den;
    let incoherent = 2.0 * g1 * (sol.rho_ee - sol.rho_ge.norm_sqr()) / r2;
    let transmittance = 1.0 - extinction;
    Ok(FluxReport {
        r: c(0.0, g1) * sol.rho_ge / rabi,
        reflectance,
        transmittance,
        incoherent,
        residual: 1.0 - reflectance - transmittance - incoherent,
    })
}

/// One disorder realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub r: C64,
    pub t: C64,
    /// Coherent scattered field at the probe points.
    pub fields: Vec<CVec3>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub realizations: usize,
    pub failed: usize,
    pub r_mean: C64,
    pub t_mean: C64,
    pub r_stderr: f64,
    pub t_stderr: f64,
    /// `⟨|r|²⟩`
    pub reflectance: f64,
    pub reflectance_stderr: f64,
    /// `⟨|t|²⟩`
    pub transmittance: f64,
    pub transmittance_stderr: f64,
    pub points: Vec<EnsembleIntensity>,
}

fn mean_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (v / n).sqrt())
}

fn cmean_stderr(x: &[C64]) -> (C64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<C64>() / n;
    let v = x.iter().map(|v| (v - m).norm_sqr()).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (v / n).sqrt())
}

/// Runs `n` realizations in parallel, realization `i` drawing from stream
/// `i` of `seed`, and reduces them in index order. Fails if more than 1% of
/// the realizations fail.
pub fn disorder_average<F>(n: usize, seed: u64, f: F) -> Result<EnsembleReport>
where
    F: Fn(usize, &mut ChaCha20Rng) -> Result<Realization> + Sync,
{
    if n < 2 {
        return Err(Error::InvalidArgument("ensemble needs at least two realizations".into()));
    }
    let results: Vec<Result<Realization>> = (0..n).into_par_iter().map(|i| f(i, &mut stream(seed, i as u64))).collect();
    let mut ok = Vec::with_capacity(n);
    let mut first_err = None;
    let mut failed = 0;
    for r in results {
        match r {
            Ok(x) => ok.push(x),
            Err(e) => {
                failed += 1;
                first_err.get_or_insert(e);
            }
        }
    }
    if failed * 100 > n || ok.len() < 2 {
        let e = first_err.map(|e| e.to_string()).unwrap_or_default();
        return Err(Error::NotConverged(format!("{failed} of {n} realizations failed; first: {e}")));
    }
    let rs: Vec<C64> = ok.iter().map(|x| x.r).collect();
    let ts: Vec<C64> = ok.iter().map(|x| x.t).collect();
    let (r_mean, r_stderr) = cmean_stderr(&rs);
    let (t_mean, t_stderr) = cmean_stderr(&ts);
    let (reflectance, reflectance_stderr) = mean_stderr(&rs.iter().map(|x| x.norm_sqr()).collect::<Vec<_>>());
    let (transmittance, transmittance_stderr) = mean_stderr(&ts.iter().map(|x| x.norm_sqr()).collect::<Vec<_>>());
    let n_pts = ok[0].fields.len();
    if ok.iter().any(|x| x.fields.len() != n_pts) {
        return Err(Error::InvalidArgument("realizations report different probe counts".into()));
    }
    let points = (0..n_pts)
        .map(|p| ensemble_intensity(&ok.iter().map(|x| x.fields[p]).collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    Ok(EnsembleReport {
        realizations: ok.len(),
        failed,
        r_mean,
        t_mean,
        r_stderr,
        t_stderr,
        reflectance,
        reflectance_stderr,
        transmittance,
        transmittance_stderr,
        points,
    })
}

/// Low-intensity scenario for [`disorder_average`]: positions of `base`
/// displaced with widths `ell` (in plane) and `ell_x`.
#[derive(Clone, Debug)]
pub struct LliDisorder {
    pub base: Geometry,
    pub ell: f64,
    pub ell_x: f64,
    pub scheme: LevelScheme,
    pub drive: Drive,
    pub delta: f64,
    /// Mode area for plane-wave drives.
    pub area: Option<f64>,
    pub probes: Vec<Vec3>,
}

impl LliDisorder {
    pub fn realize(&self, rng: &mut ChaCha20Rng) -> Result<Realization> {
        let g = sample_disordered(&self.base, self.ell, self.ell_x, rng)?;
        let mut sys = LliSystem::new(g, self.scheme.clone())?;
        sys.set_detuning(self.delta);
        let b = sys.steady_state(&sys.rabi(&self.drive))?;
        let amp = mode_overlap_rt(&sys, &b, &self.drive, self.area)?;
        let fields = self.probes.iter().map(|&p| coherent_field(&sys, &b, p)).collect::<Result<_>>()?;
        Ok(Realization { r: amp.r, t: amp.t, fields })
    }
}

/// Least-squares fit of `1 − A w²/((Δ − Δ₀)² + w²)` to a transmission dip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorentzFit {
    pub center: f64,
    /// Half width at half maximum.
    pub width: f64,
    pub depth: f64,
    pub rms: f64,
}

/// Levenberg–Marquardt fit of a Lorentzian dip, started from the sampled
/// minimum and its half-depth width.
pub fn fit_lorentzian_dip(deltas: &[f64], t: &[f64]) -> Result<LorentzFit> {
    if deltas.len() != t.len() || deltas.len() < 4 {
        return Err(Error::InvalidArgument("fit needs at least four matching samples".into()));
    }
    let model = |p: &[f64; 3], d: f64| {
        let w2 = p[1] * p[1];
        1.0 - p[2] * w2 / ((d - p[0]).powi(2) + w2)
    };
    let cost = |p: &[f64; 3]| deltas.iter().zip(t).map(|(&d, &y)| (model(p, d) - y).powi(2)).sum::<f64>();
    let (imin, &tmin) = t.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty");
    let depth0 = (1.0 - tmin).max(1e-6);
    let half = 1.0 - depth0 / 2.0;
    let left = (0..imin).rev().find(|&i| t[i] > half).map(|i| deltas[i]).unwrap_or(deltas[0]);
    let right = (imin..t.len()).find(|&i| t[i] > half).map(|i| deltas[i]).unwrap_or(deltas[t.len() - 1]);
    let mut p = [deltas[imin], (0.5 * (right - left)).abs().max(1e-6), depth0];
    let mut lambda = 1e-3;
    let mut cur = cost(&p);
    for _ in 0..500 {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (&d, &y) in deltas.iter().zip(t) {
            let w2 = p[1] * p[1];
            let den = (d - p[0]).powi(2) + w2;
            let res = model(&p, d) - y;
            let g = [
                -p[2] * w2 * 2.0 * (d - p[0]) / (den * den),
                -p[2] * 2.0 * p[1] * (d - p[0]).powi(2) / (den * den),
                -w2 / den,
            ];
            for i in 0..3 {
                jtr[i] += g[i] * res;
                for k in 0..3 {
                    jtj[i][k] += g[i] * g[k];
                }
            }
        }
        let a = CMat::from_shape_fn((3, 3), |(i, k)| {
            c(jtj[i][k] + if i == k { lambda * jtj[i][i].max(1e-300) } else { 0.0 }, 0.0)
        });
        let b = CVec::from_shape_fn(3, |i| c(-jtr[i], 0.0));
        let step = match crate::linalg::solve(&a, &b) {
            Ok(s) => s,
            Err(_) => break,
        };
        let trial = [p[0] + step[0].re, (p[1] + step[1].re).abs(), p[2] + step[2].re];
        let tc = cost(&trial);
        if tc < cur {
            let done = (cur - tc) <= 1e-15 * cur.max(1e-300);
            p = trial;
            cur = tc;
            lambda = (lambda * 0.3).max(1e-12);
            if done {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    if !p.iter().all(|x| x.is_finite()) {
        return Err(Error::NotConverged("Lorentzian fit diverged".into()));
    }
    Ok(LorentzFit { center: p[0], width: p[1], depth: p[2], rms: (cur / deltas.len() as f64).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infinite::UniformMode;
    use crate::rng::stream;
    use crate::semiclassical::uniform_steady_state;
    use crate::LAMBDA;
    use rand::Rng;

    fn random_system(seed: u64, n: usize, scheme: LevelScheme) -> LliSystem {
        let mut rng = stream(seed, 0);
        let pos = (0..n).map(|_| [0, 1, 2].map(|_| rng.gen_range(-0.6..0.6) * LAMBDA)).collect();
        LliSystem::new(Geometry::new(pos).unwrap(), scheme).unwrap()
    }

    #[test]
    fn single_atom_rate_and_field() {
        let g = Geometry::new(vec![[0.0; 3]]).unwrap();
        let sys = LliSystem::new(g, LevelScheme::two_level([0.0, 0.0, 1.0])).unwrap();
        let s = CVec::from(vec![c(0.3, 0.1)]);
        let mut corr = factorized_correlations(&s);
        corr[[0, 0]] = c(0.2, 0.0);
        let rates = scattering_rates(&sys.coupling.gamma, &corr, &s, 1).unwrap();
        assert!((rates.total - 0.4).abs() < 1e-15);
        assert!((rates.incoherent_saq - 2.0 * (0.2 - 0.1)).abs() < 1e-15);
        // far field perpendicular to the dipole: |E| r = ξ|s|/4π
        let rr = 1e4;
        let e = coherent_field(&sys, &s, [rr, 0.0, 0.0]).unwrap();
        let mag = dotc(&e, &e).re.sqrt() * rr;
        assert!((mag - XI * s[0].norm() / FOUR_PI).abs() < 1e-3);
    }

    #[test]
    fn rate_formula_equals_quadrature() {
        for seed in 0..3 {
            let sys = random_system(seed, 4, LevelScheme::ZeroToOne);
            let mut rng = stream(seed, 1);
            let m = sys.dim();
            let a = CMat::from_shape_fn((m, m), |_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let corr = a.t().mapv(|x| x.conj()).dot(&a);
            let s = CVec::zeros(m);
            let n = scattering_rates(&sys.coupling.gamma, &corr, &s, 3).unwrap().total;
            let q = rate_by_quadrature(&sys.geometry.positions, &sys.channels, &corr, 48, 96).unwrap();
            assert!(((n - q) / n).abs() < 1e-6, "{n} {q}");
        }
    }

    #[test]
    fn fixed_position_semiclassical_has_no_incoherent_light() {
        let sys = random_system(5, 3, LevelScheme::two_level([0.0, 1.0, 0.0]));
        let s = CVec::from(vec![c(0.1, 0.2), c(-0.3, 0.0), c(0.0, 0.05)]);
        let t = intensity_decomposition(&sys, None, &s, &factorized_correlations(&s), [20.0, 1.0, 2.0]).unwrap();
        assert_eq!(t.incoherent, 0.0);
        assert!(t.coherent > 0.0);
    }

    #[test]
    fn in_phase_pair_doubles_forward_field() {
        let one =
            LliSystem::new(Geometry::new(vec![[0.0; 3]]).unwrap(), LevelScheme::two_level([0.0, 1.0, 0.0])).unwrap();
        let two = LliSystem::new(
            Geometry::new(vec![[0.0, 0.0, -0.1], [0.0, 0.0, 0.1]]).unwrap(),
            LevelScheme::two_level([0.0, 1.0, 0.0]),
        )
        .unwrap();
        let f1 = far_field(&one, &CVec::from(vec![c(1.0, 0.0)]), [1.0, 0.0, 0.0]);
        let f2 = far_field(&two, &CVec::from(vec![c(1.0, 0.0); 2]), [1.0, 0.0, 0.0]);
        assert!((f2[1] - 2.0 * f1[1]).norm() < 1e-12);
    }

    #[test]
    fn ensemble_split_matches_both_estimators() {
        let mut rng = stream(3, 0);
        let samples: Vec<CVec3> =
            (0..50).map(|_| [0, 1, 2].map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))).collect();
        let e = ensemble_intensity(&samples).unwrap();
        assert!(e.incoherent >= 0.0);
        assert!((e.mean_intensity - e.coherent - e.incoherent).abs() < 1e-12);
        assert!(ensemble_intensity(&samples[..1]).is_err());
    }

    #[test]
    fn uniform_flux_closes() {
        let (om, ga) = (-0.4, -0.3);
        for d in [-1.0, 0.0, 0.7] {
            for r in [1e-4, 0.3, 2.0, 40.0] {
                for sol in uniform_steady_state(d, c(r, 0.0), om, ga).unwrap() {
                    let f = rt_beyond_lli(d, om, ga, c(r, 0.0), &sol).unwrap();
                    assert!(f.residual.abs() < 1e-10);
                    assert!((f.reflectance - f.r.norm_sqr()).abs() < 1e-10);
                    assert!(((1.0 + f.r).norm_sqr() - f.transmittance).abs() < 1e-10);
                }
            }
        }
        let sol = uniform_steady_state(0.0, c(1e3, 0.0), om, ga).unwrap()[0];
        assert!(rt_beyond_lli(0.0, om, ga, c(1e3, 0.0), &sol).unwrap().transmittance > 0.99);
    }

    #[test]
    fn weak_drive_flux_matches_single_mode() {
        let m = UniformMode { omega: 0.3, gamma: -0.2 };
        let sol = uniform_steady_state(0.1, c(1e-6, 0.0), m.omega, m.gamma).unwrap()[0];
        let f = rt_beyond_lli(0.1, m.omega, m.gamma, c(1e-6, 0.0), &sol).unwrap();
        let (r, _) = m.rt(0.1);
        assert!((f.r - r).norm() < 1e-9);
        assert!(f.incoherent.abs() < 1e-9);
    }

    #[test]
    fn collected_amplitudes_obey_symmetry() {
        let a = 0.5 * LAMBDA;
        let n = 8;
        let g = Geometry::square_lattice(n, n, a).unwrap();
        let mut sys = LliSystem::new(g, LevelScheme::two_level([0.0, 1.0, 0.0])).unwrap();
        sys.set_detuning(0.2);
        let drive = Drive::gaussian(0.3 * n as f64 * a, [0.0, 1.0, 0.0], 1.0).unwrap();
        let b = sys.steady_state(&sys.rabi(&drive)).unwrap();
        let col = collected_rt(&sys, &b, &drive, 0.5, (32, 48)).unwrap();
        assert!((col.t - 1.0 - col.r).norm() < 1e-8);
        let ov = mode_overlap_rt(&sys, &b, &drive, None).unwrap();
        assert!((ov.t - 1.0 - ov.r).norm() < 1e-12);
        let zero = mode_overlap_rt(&sys, &CVec::zeros(sys.dim()), &drive, None).unwrap();
        assert_eq!((zero.r, zero.t), (c(0.0, 0.0), c(1.0, 0.0)));
    }

    #[test]
    fn zero_width_disorder_has_no_variance() {
        let scen = LliDisorder {
            base: Geometry::square_lattice(3, 3, 0.4 * LAMBDA).unwrap(),
            ell: 0.0,
            ell_x: 0.0,
            scheme: LevelScheme::two_level([0.0, 1.0, 0.0]),
            drive: Drive::plane_wave([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 1.0).unwrap(),
            delta: 0.3,
            area: Some(9.0 * (0.4 * LAMBDA).powi(2)),
            probes: vec![[30.0, 0.0, 0.0]],
        };
        let rep = disorder_average(4, 11, |_, rng| scen.realize(rng)).unwrap();
        assert!(rep.points[0].incoherent < 1e-20);
        assert!(rep.r_stderr < 1e-14);
        let fixed = scen.realize(&mut stream(0, 0)).unwrap();
        assert!((rep.r_mean - fixed.r).norm() < 1e-12);
    }

    #[test]
    fn lorentzian_fit_recovers_parameters() {
        let ds: Vec<f64> = (0..200).map(|k| -3.0 + 0.03 * k as f64).collect();
        let t: Vec<f64> = ds.iter().map(|d| 1.0 - 0.8 * 0.36 / ((d - 0.4).powi(2) + 0.36)).collect();
        let f = fit_lorentzian_dip(&ds, &t).unwrap();
        assert!((f.center - 0.4).abs() < 1e-8 && (f.width - 0.6).abs() < 1e-8 && (f.depth - 0.8).abs() < 1e-8);
    }
}
