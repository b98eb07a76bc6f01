use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use coopoptics::geometry::{sample_disordered, Geometry};
use coopoptics::infinite::{band_structure, UniformMode};
use coopoptics::kernel::LevelScheme;
use coopoptics::linalg::{CMat, CVec};
use coopoptics::lli::{Drive, LliSystem};
use coopoptics::observables::{
    disorder_average, fit_lorentzian_dip, mode_overlap_rt, rate_by_quadrature, rt_beyond_lli, scattering_rates,
    LliDisorder, LorentzFit,
};
use coopoptics::quantum::{
    detection_coefficients, g2_from_clicks, g2_regression, run_trajectories, JumpBasis, QuantumSystem,
    TrajectoryOptions, QME_DIM_CAP, TRAJ_DIM_CAP,
};
use coopoptics::rng::stream;
use coopoptics::semiclassical::{bistability_bound, bistability_scan, max_bistable_spacing, uniform_steady_state};
use coopoptics::stacked1d::{planar_checks, Layer, LayerStack};
use coopoptics::{rabi_for_intensity, Vec3, C64, LAMBDA};

use crate::config::{Config, GeometrySpec, GridSpec, ScenarioKind};
use crate::output::{num, Outputs};
use crate::CliError;

/// Result of a scenario: `passed` is false only when a check failed.
pub struct Status {
    pub passed: bool,
    pub summary: String,
}

impl Status {
    fn ok(summary: impl Into<String>) -> Self {
        Status { passed: true, summary: summary.into() }
    }
}

pub fn run(cfg: &Config, out: &mut Outputs) -> Result<Status, CliError> {
    match cfg.scenario {
        ScenarioKind::Spectrum => spectrum(cfg, out),
        ScenarioKind::Eigen => eigen(cfg, out),
        ScenarioKind::Transmit => transmit(cfg, out),
        ScenarioKind::Bistab => bistab(cfg, out),
        ScenarioKind::Bands => bands(cfg, out),
        ScenarioKind::Stack => stack(cfg, out),
        ScenarioKind::Qme => qme(cfg, out),
        ScenarioKind::Traj => traj(cfg, out),
        ScenarioKind::G2 => g2(cfg, out),
        ScenarioKind::Disorder => disorder(cfg, out),
        ScenarioKind::Checks => checks(cfg, out),
    }
}

fn b(x: bool) -> String {
    x.to_string()
}

fn system(cfg: &Config, geometry: Geometry, delta: f64) -> Result<LliSystem, CliError> {
    let mut sys = LliSystem::new(geometry, cfg.scheme())?;
    match cfg.level_shifts() {
        Some(s) => sys.set_uniform_level_shifts(delta, s)?,
        None => sys.set_detuning(delta),
    }
    Ok(sys)
}

/// Mode area [1/k²] for r/t of a plane-wave drive.
fn plane_area(cfg: &Config, area: Option<f64>, drive: &Drive) -> Result<Option<f64>, CliError> {
    if drive.mode_area().is_some() {
        return Ok(None);
    }
    match (area, cfg.geometry_spec()?) {
        (Some(a), _) => Ok(Some(a * LAMBDA * LAMBDA)),
        (None, GeometrySpec::Square { ny, nz, a }) => Ok(Some((ny * nz) as f64 * (a * LAMBDA).powi(2))),
        _ => Err(CliError::Config("params.area: required for a plane-wave drive on this geometry".into())),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpectrumParams {
    #[serde(default = "y_hat")]
    polarization: Vec3,
}

fn y_hat() -> Vec3 {
    [0.0, 1.0, 0.0]
}

fn x_hat() -> Vec3 {
    [1.0, 0.0, 0.0]
}

fn spectrum(cfg: &Config, out: &mut Outputs) -> Result<Status, CliError> {
    let p: SpectrumParams = cfg.params()?;
    let a = cfg.spacing()?;
    let mode = UniformMode::from_lattice(a, p.polarization)?;
    let i = cfg.intensity();
    let rabi = C64::new(rabi_for_intensity(i), 0.0);
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for d in cfg.detunings()? {
        if i == 0.0 {
            let (r, t) = mode.rt(d);
            let res = 1.0 - r.norm_sqr() - t.norm_sqr();
            worst = worst.max(res.abs());
            rows.push(vec![
                num(d),
                num(0.0),
                "0".into(),
                num(r.norm_sqr()),
                num(t.norm_sqr()),
                num(0.0),
                num(res),
                b(true),
            ]);
            continue;
        }
        for (k, sol) in uniform_steady_state(d, rabi, mode.omega, mode.gamma)?.iter().enumerate() {
            let f = rt_beyond_lli(d, mode.omega, mode.gamma, rabi, sol)?;
            worst = worst.max(f.residual.abs());
            rows.push(vec![
                num(d),
                num(i),
                k.to_string(),
                num(f.reflectance),
                num(f.transmittance),
                num(f.incoherent),
                num(f.residual),
                b(sol.stable),
            ]);
        }
    }
    out.csv(
        "spectrum.csv",
        &[
            "delta [gamma]",
            "intensity [I_sat]",
            "root",
            "reflectance [1]",
            "transmittance [1]",
            "incoherent [1]",
            "residual [1]",
            "stable",
        ],
        &rows,
    )?;
    out.json(
        "spectrum_summary.json",
        &serde_json::json!({
            "a_lambda": a / LAMBDA,
            "omega_tilde_gamma": mode.omega,
            "gamma_tilde_gamma": mode.gamma,
            "max_abs_residual": worst,
        }),
    )?;
    Ok(Status::ok(format!("spectrum: {} rows, Ω̃ = {:.6}γ, γ̃ = {:.6}γ", rows.len(), mode.omega, mode.gamma)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EigenParams {
    #[serde(default = "default_bins")]
    bins: usize,
}

fn default_bins() -> usize {
    40
}

fn eigen(cfg: &Config, out: &mut Outputs) -> Result<Status, CliError> {
    let p: EigenParams = cfg.params()?;
    if p.bins == 0 {
        return Err(CliError::Config("params.bins: must be ≥ 1".into()));
    }
    let mut g = cfg.geometry()?;
    if let Some((ell, ell_x, _)) = cfg.disorder_widths()? {
        g = sample_disordered(&g, ell, ell_x, &mut stream(cfg.seed, 0))?;
    }
    let sys = system(cfg, g, 0.0)?;
    let es = sys.eigenmodes()?;
    let shifts = es.shifts();
    let widths = es.linewidths();
    let rows: Vec<Vec<String>> = (0..es.len()).map(|k| vec![k.to_string(), num(shifts[k]), num(widths[k])]).collect();
    out.csv("eigenvalues.csv", &["mode", "shift [gamma]", "linewidth [gamma]"], &rows)?;

    // logarithmic bins resolve the subradiant tail
    let pos: Vec<f64> = widths.iter().copied().filter(|w| *w > 0.0).collect();
    let lo = pos.iter().copied().fold(f64::INFINITY, f64::min).log10();
    let hi = pos.iter().copied().fold(0.0, f64::max).log10();
    let span = (hi - lo).max(1e-12);
    let mut counts = vec![0usize; p.bins];
    for w in &pos {
        let k = (((w.log10() - lo) / span) * p.bins as f64) as usize;
        counts[k.min(p.bins - 1)] += 1;
    }
    let hist: Vec<Vec<String>> = (0..p.bins)
        .map(|k| {
            let e0 = 10f64.powf(lo + span * k as f64 / p.bins as f64);
            let e1 = 10f64.powf(lo + span * (k + 1) as f64 / p.bins as f64);
            vec![num(e0), num(e1), counts[k].to_string()]
        })
        .collect();
    out.csv("linewidth_hist.csv", &["linewidth_lo [gamma]", "linewidth_hi [gamma]", "count"], &hist)?;
    let sub = widths.iter().filter(|w| **w < 1.0).count();
    out.json(
        "eigen_summary.json",
        &serde_json::json!({
            "modes": es.len(),
            "subradiant": sub,
            "min_linewidth_gamma": 10f64.powf(lo),
            "max_linewidth_gamma": 10f64.powf(hi),
            "non_positive_linewidths": widths.len() - pos.len(),
            "exceptional": es.exceptional,
        }),
    )?;
    Ok(Status::ok(format!("eigen: {} modes, {} subradiant", es.len(), sub)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TransmitParams {
    /// Mode area [λ²] for plane-wave drives.
    #[serde(default)]
    area: Option<f64>,
}

fn transmit(cfg: &Config, out: &mut Outputs) -> Result<Status, CliError> {
    let p: TransmitParams = cfg.params()?;
    let deltas = cfg.detunings()?;
    let base = cfg.geometry()?;
    let drive = cfg.drive()?;
    let area = plane_area(cfg, p.area, &drive)?;
    let scan = |g: Geometry| -> Result<Vec<(C64, C64)>, CliError> {
        let sys = system(cfg, g, 0.0)?;
        let bs = sys.steady_state_scan(&sys.rabi(&drive), &deltas)?;
        bs.iter()
            .map(|bv| mode_overlap_rt(&sys, bv, &drive, area).map(|a| (a.r, a.t)).map_err(CliError::from))
            .collect()
    };
    let (rows, tr, header): (Vec<Vec<String>>, Vec<f64>, Vec<&str>) = match cfg.disorder_widths()? {
        None => {
            let rt = scan(base)?;
            let rows = deltas
                .iter()
                .zip(&rt)
                .map(|(d, (r, t))| {
                    vec![num(*d), num(t.norm_sqr()), num(r.norm_sqr()), num(t.arg()), num(t.re), num(t.im)]
                })
                .collect();
            (
                rows,
                rt.iter().map(|x| x.1.norm_sqr()).collect(),
                vec!["delta [gamma]", "transmittance [1]", "reflectance [1]", "arg_t [rad]", "re_t [1]", "im_t [1]"],
            )
        }
        Some((ell, ell_x, n)) => {
            let runs: Vec<Result<Vec<(C64, C64)>, CliError>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let g = sample_disordered(&base, ell, ell_x, &mut stream(cfg.seed, i as u64))?;
                    scan(g)
                })
                .collect();
            let mut ok = Vec::new();
            let mut first = None;
            for r in runs {
                match r {
                    Ok(v) => ok.push(v),
                    Err(e) => {
                        first.get_or_insert(e);
                    }
                }
            }
            let failed = n - ok.len();
            if failed * 100 > n || ok.len() < 2 {
                return Err(first.unwrap_or(CliError::Numeric("no realizations".into(), true)));
            }
            let m = ok.len() as f64;
            let mut rows = Vec::new();
            let mut tr = Vec::new();
            for (k, d) in deltas.iter().enumerate() {
                let t2: Vec<f64> = ok.iter().map(|v| v[k].1.norm_sqr()).collect();
                let r2: Vec<f64> = ok.iter().map(|v| v[k].0.norm_sqr()).collect();
                let mt = t2.iter().sum::<f64>() / m;
                let mr = r2.iter().sum::<f64>() / m;
                let se = (t2.iter().map(|x| (x - mt).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt();
                let tmean = ok.iter().map(|v| v[k].1).sum::<C64>() / m;
                rows.push(vec![num(*d), num(mt), num(se), num(tmean.norm_sqr()), num(mr), failed.to_string()]);
                tr.push(mt);
            }
            (
                rows,
                tr,
                vec![
                    "delta [gamma]",
                    "transmittance [1]",
                    "transmittance_stderr [1]",
                    "coherent_transmittance [1]",
                    "reflectance [1]",
                    "failed_realizations",
                ],
            )
        }
    };
    out.csv("transmission.csv", &header, &rows)?;
    let fit: Option<LorentzFit> = if deltas.len() >= 4 { Some(fit_lorentzian_dip(&deltas, &tr)?) } else { None };
    out.json("fit.json", &fit)?;
    let msg = match fit {
        Some(f) => format!("transmit: fitted width {:.6}γ at Δ = {:.6}γ, depth {:.4}", f.width, f.center, f.depth),
        None => "transmit: too few detunings to fit".to_string(),
    };
    Ok(Status::ok(msg))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BistabParams {
    intensities: GridSpec,
    /// Search `[a_lo, a_hi]` [λ] for the largest bistable spacing.
    #[serde(default)]
    spacing_search: Option<[f64; 2]>,
}

fn bistab(cfg: &Config, out: &mut Outputs) -> Result<Status, CliError> {
    let p: BistabParams = cfg.params()?;
    let a = cfg.spacing()?;
    let ints = p.intensities.values("params.intensities")?;
    let scan = bistability_scan(a, &cfg.detunings()?, &ints)?;
    let map: Vec<Vec<String>> = scan
        .points
        .iter()
        .map(|q| vec![num(q.delta), num(q.i_ratio), q.roots.to_string(), q.stable.to_string()])
        .collect();
    out.csv("bistab_map.csv", &["delta [gamma]", "intensity [I_sat]", "roots", "stable_roots"], &map)?;
    let br: Vec<Vec<String>> = scan
        .branches
        .iter()
        .map(|(d, i, k, s)| vec![num(*d), num(*i), k.to_string(), num(s.rbar2), num(s.rho_ee), num(s.z), b(s.stable)])
        .collect();
    out.csv(
        "bistab_branches.csv",
        &["delta [gamma]", "intensity [I_sat]", "root", "rbar2 [gamma^2]", "rho_ee [1]", "z [1]", "stable"],
        &br,
    )?;
    let max_a = match p.spacing_search {
        Some([lo, hi]) => Some(max_bistable_spacing(lo * LAMBDA, hi * LAMBDA, 1e-6)? / LAMBDA),
        None => None,
    };
    out.json(
        "bistab_summary.json",
        &serde_json::json!({
            "a_lambda": a / LAMBDA,
            "omega_tilde_gamma": scan.omega_t,
            "gamma_tilde_gamma": scan.gamma_t,
            "bistable": scan.any_bistable(),
            "max_bistable_spacing_lambda": max_a,
            "analytic_bound_lambda": bistability_bound() / LAMBDA,
        }),
    )?;
    Ok(Status::ok(format!(
        "bistab: bistable = {}{}",
        scan.any_bistable(),
        max_a.map(|x| format!(", max spacing {x:.5}λ")).unwrap_or_default()
    )))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BandsParams {
    #[serde(default = "default_points")]
    points: usize,
    /// In-plane direction `(q_y, q_z)` of the cut.
    #[serde(default = "default_cut")]
    direction: [f64; 2],
    /// End of the cut in units of `π/a`.
    #[serde(default = "one")]
    q_max: f64,
}

fn default_points() -> usize {
    101
}

fn default_cut() -> [f64; 2] {
    [1.0, 0.0]
}

fn one() -> f64 {
    1.0
}

fn bands(cfg: &Config, out: &mut Outputs) -> Result<Status, CliError> {
    let p: BandsParams = cfg.params()?;
    let a = cfg.spacing()?;
    let nd = p.direction[0].hypot(p.direction[1]);
    if p.points < 2 || !(nd > 0.0) {
        return Err(CliError::Config("params: need points ≥ 2 and a nonzero direction".into()));
    }
    let u = [p.direction[0] / nd, p.direction[1] / nd];
    let qs: Vec<[f64; 2]> = (0..p.points)
        .map(|k| {
            let s = p.q_max * std::f64::consts::PI / a * k as f64 / (p.points - 1) as f64;
            [s * u[0], s * u[1]]
        })
        .collect();
    let res = band_structure(a, &qs);
    let mut failures = 0;
    let rows: Vec<Vec<String>> = qs
        .iter()
        .zip(res)
        .map(|(q, r)| {
            let mut row = vec![num(q[0] * a / std::f64::consts::PI), num(q[1] * a / std::f64::consts::PI)];
            match r {
                Ok(ev) => {
                    for e in ev {
                        row.push(num(e.re));
                        row.push(num(e.im));
                    }
                    row.push("ok".into());
                }
                Err(e) => {
                    failures += 1;
                    row.extend(std::iter::repeat("NaN".to_string()).take(6));
                    row.push(e.to_string());
                }
            }
            row
        })
        .collect();
    out.csv(
        "bands.csv",
        &[
            "q_y [pi/a]",
            "q_z [pi/a]",
            "shift_0 [gamma]",
            "width_0 [gamma]",
            "shift_1 [gamma]",
            "width_1 [gamma]",
            "shift_2 [gamma]",
            "width_2 [gamma]",
            "status",
        ],
        &rows,
    )?;
    Ok(Status::ok(format!("bands: {} points, {} on or near the light cone", rows.len(), failures)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StackParams {
    /// `γ_1D` [γ]; taken from the lattice sums when absent.
    #[serde(default)]
    gamma_1d: Option<f64>,
    /// Collective shift `Ω̃` [γ].
    #[serde(default)]
    shift: Option<f64>,
    #[serde(default = "one")]
    loss_factor: f64,
}

fn stack(cfg: &Config, out: &mut Outputs) -> Result<Status, CliError> {
    let p: StackParams = cfg.params()?;
    let l = cfg.layers.as_ref().ok_or_else(|| CliError::Config("layers: required for stack".into()))?;
    let st = match (p.gamma_1d, p.shift) {
        (Some(g), Some(s)) => LayerStack::new(
            (0..l.count)
                .map(|j| Layer { x: j as f64 * l.d * LAMBDA, gamma_1d: g, shift: s, loss_factor: p.loss_factor })
                .collect(),
        )?,
        (None, None) => {
            let mut st = LayerStack::square_arrays(l.count, l.d * LAMBDA, cfg.spacing()?)?;
            for layer in &mut st.layers {
                layer.loss_factor = p.loss_factor;
            }
            LayerStack::new(st.layers)?
        }
        _ => return Err(CliError::Config("params: give both gamma_1d and shift, or neither".into())),
    };
    let warning = st.validity_warning();
    if let Some(w) = &warning {
        eprintln!("warning: {w}");
    }
    let mut rows = Vec::new();
    for d in cfg.detunings()? {
        let (r, t) = st.system_rt_star(d);
        rows.push(vec![num(d), num(t.norm_sqr()), num(r.norm_sqr()), num(t.arg()), num(r.arg())]);
    }
    out.csv(
        "stack.csv",
        &["delta [gamma]", "transmittance [1]", "reflectance [1]", "arg_t [rad]", "arg_r [rad]"],
        &rows,
    )?;
    out.json("stack_summary.json", &serde_json::json!({ "layers": st.layers, "validity_warning": warning }))?;
    Ok(Status::ok(format!("stack: {} layers, {} detunings", st.len(), rows.len())))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QmeParams {
    #[serde(default)]
    delta: f64,
    /// Evolve from the ground state to `t_max` [1/γ] when positive.
    #[serde(default)]
    t_max: f64,
    #[serde(default = "default_points")]
    points: usize,
}

fn time_grid(t_max: f64, points: usize) -> Result<Vec<f64>, CliError> {
    if !(t_max > 0.0) || points < 2 {
        return Err(CliError::Config("params: need t_max > 0 and points ≥ 2".into()));
    }
    Ok((0..points).map(|k| t_max * k as f64 / (points - 1) as f64).collect())
}

fn quantum_system(cfg: &Config, delta: f64, cap: usize) -> Result<(LliSystem, QuantumSystem), CliError> {
    let sys = system(cfg, cfg.geometry()?, delta)?;
    let q = QuantumSystem::new(&sys, &sys.rabi(&cfg.drive()?), cap)?;
    Ok((sys, q))
}

fn qme(cfg: &Config, out: &mut Outputs) -> Result<Status, CliError> {
    let p: QmeParams = cfg.params()?;
    let (sys, q) = quantum_system(cfg, p.delta, QME_DIM_CAP)?;
    let rho = q.steady_state(cfg.tolerances.steady, cfg.tolerances.horizon)?;
    q.check_density(&rho, 1e-8)?;
    let s = q.coherences(&rho);
    let corr = q.correlations(&rho);
    let nc = q.nc;
    let rows: Vec<Vec<String>> = (0..q.channels_total())
        .map(|k| vec![(k / nc).to_string(), (k % nc).to_string(), num(corr[[k, k]].re), num(s[k].re), num(s[k].im)])
        .collect();
    out.csv("qme_steady.csv", &["atom", "channel", "population [1]", "re_coherence [1]", "im_coherence [1]"], &rows)?;
    let rates = scattering_rates(&sys.coupling.gamma, &corr, &s, nc)?;
    out.json("qme_summary.json", &serde_json::json!({ "dimension": q.dim, "rates_gamma": rates }))?;
    if p.t_max > 0.0 {
        let times = time_grid(p.t_max, p.points)?;
        let traj = q.evolve(&q.ground_density(), &times, Default::default())?;
        let mut rows = Vec::new();
        for (t, r) in times.iter().zip(&traj) {
            let c = q.correlations(r);
            for k in 0..q.channels_total() {
                rows.push(vec![num(*t), k.to_string(), num(c[[k, k]].re)]);
            }
        }
        out.csv("qme_evolution.csv", &["t [1/gamma]", "channel", "population [1]"], &rows)?;
    }
    Ok(Status::ok(format!("qme: dimension {}, scattering rate {:.6}γ", q.dim, rates.total)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajParams {
    #[serde(default)]
    delta: f64,
    #[serde(default = "default_traj")]
    n_traj: usize,
    #[serde(default = "default_t_max")]
    t_max: f64,
    #[serde(default = "default_points")]
    points: usize,
    #[serde(default = "default_basis")]
    basis: JumpBasis,
}

fn default_traj() -> usize {
    1000
}

fn default_t_max() -> f64 {
    10.0
}

fn default_basis() -> JumpBasis {
    JumpBasis::Directional { n_theta: 16, n_phi: 32 }
}

fn click_rows(clicks: &[coopoptics::quantum::Click]) -> Vec<Vec<String>> {
    clicks
        .iter()
        .map(|c| vec![c.trajectory.to_string(), num(c.t), num(c.theta), num(c.phi), c.polarization.to_string()])
        .collect()
}

const CLICK_HEADER: [&str; 5] = ["trajectory", "t [1/gamma]", "theta [rad]", "phi [rad]", "polarization"];

fn traj(cfg: &Config, out: &mut Outputs) -> Result<Status, CliError> {
    let p: TrajParams = cfg.params()?;
    if p.n_traj == 0 {
        return Err(CliError::Config("params.n_traj: must be ≥ 1".into()));
    }
    let (_, q) = quantum_system(cfg, p.delta, TRAJ_DIM_CAP)?;
    let times = time_grid(p.t_max, p.points)?;
    let ens =
        run_trajectories(&q, &q.ground_state(), p.basis, &times, p.n_traj, cfg.seed, TrajectoryOptions::default())?;
    let mut rows = Vec::new();
    for (k, t) in times.iter().enumerate() {
        for a in 0..q.channels_total() {
            rows.push(vec![num(*t), a.to_string(), num(ens.populations[k][a]), num(ens.populations_stderr[k][a])]);
        }
    }
    out.csv("traj_populations.csv", &["t [1/gamma]", "channel", "population [1]", "stderr [1]"], &rows)?;
    if matches!(p.basis, JumpBasis::Directional { .. }) {
        out.csv("clicks.csv", &CLICK_HEADER, &click_rows(&ens.clicks))?;
    }
    Ok(Status::ok(format!("traj: {} trajectories, {} jumps", ens.n_traj, ens.jumps)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct G2Params {
    #[serde(default)]
    delta: f64,
    #[serde(default = "default_taus")]
    taus: GridSpec,
    #[serde(default = "x_hat")]
    direction: Vec3,
    #[serde(default = "y_hat")]
    polarization: Vec3,
    /// Click-statistics estimate (single atom only).
    #[serde(default)]
    trajectories: Option<G2Traj>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct G2Traj {
    n_traj: usize,
    /// Record length after `burn_in` [1/γ].
    duration: f64,
    #[serde(default = "default_burn")]
    burn_in: f64,
    bin: f64,
    n_bins: usize,
}

fn default_burn() -> f64 {
    20.0
}

fn default_taus() -> GridSpec {
    GridSpec::Range { start: 0.0, stop: 10.0, points: 201 }
}

fn g2(cfg: &Config, out: &mut Outputs) -> Result<Status, CliError> {
    let p: G2Params = cfg.params()?;
    let taus = p.taus.values("params.taus")?;
    let (_, q) = quantum_system(cfg, p.delta, QME_DIM_CAP)?;
    let rho = q.steady_state(cfg.tolerances.steady, cfg.tolerances.horizon)?;
    let pol = p.polarization.map(|x| C64::new(x, 0.0));
    let coef = detection_coefficients(&q, p.direction, pol)?;
    let g = g2_regression(&q, &rho, &coef, &taus)?;
    let rows: Vec<Vec<String>> = taus.iter().zip(&g).map(|(t, v)| vec![num(*t), num(*v), num(0.0)]).collect();
    out.csv("g2.csv", &["tau [1/gamma]", "g2 [1]", "stderr [1]"], &rows)?;
    if let Some(tp) = p.trajectories {
        if q.n != 1 || q.nc != 1 {
            return Err(CliError::Config("params.trajectories: click statistics need a single two-level atom".into()));
        }
        if tp.n_traj < 2 || !(tp.duration > 0.0) || !(tp.burn_in >= 0.0) {
            return Err(CliError::Config("params.trajectories: need n_traj ≥ 2, duration > 0".into()));
        }
        let t_end = tp.burn_in + tp.duration;
        let ens = run_trajectories(
            &q,
            &q.ground_state(),
            JumpBasis::Directional { n_theta: 8, n_phi: 16 },
            &[0.0, t_end],
            tp.n_traj,
            cfg.seed,
            TrajectoryOptions::default(),
        )?;
        let mut records = vec![Vec::new(); tp.n_traj];
        for c in &ens.clicks {
            if c.t >= tp.burn_in {
                records[c.trajectory].push(c.t - tp.burn_in);
            }
        }
        for r in &mut records {
            r.sort_by(f64::total_cmp);
        }
        let (m, e) = g2_from_clicks(&records, tp.duration, tp.bin, tp.n_bins)?;
        let rows: Vec<Vec<String>> =
            (0..tp.n_bins).map(|k| vec![num((k as f64 + 0.5) * tp.bin), num(m[k]), num(e[k])]).collect();
        out.csv("g2_clicks.csv", &["tau [1/gamma]", "g2 [1]", "stderr [1]"], &rows)?;
        out.csv("clicks.csv", &CLICK_HEADER, &click_rows(&ens.clicks))?;
    }
    Ok(Status::ok(format!("g2: g2(0) = {:.6e}", g.first().copied().unwrap_or(f64::NAN))))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DisorderParams {
    #[serde(default)]
    delta: f64,
    #[serde(default)]
    area: Option<f64>,
    /// Field probe points [λ].
    #[serde(default)]
    probes: Vec<Vec3>,
}

fn disorder(cfg: &Config, out: &mut Outputs) -> Result<Status, CliError> {
    let p: DisorderParams = cfg.params()?;
    let (ell, ell_x, n) =
        cfg.disorder_widths()?.ok_or_else(|| CliError::Config("disorder: required for this scenario".into()))?;
    let drive = cfg.drive()?;
    if cfg.level_shifts().is_some() {
        return Err(CliError::Config("transition.shifts: not supported by the disorder scenario".into()));
    }
    let d = LliDisorder {
        base: cfg.geometry()?,
        ell,
        ell_x,
        scheme: cfg.scheme(),
        area: plane_area(cfg, p.area, &drive)?,
        drive,
        delta: p.delta,
        probes: p.probes.iter().map(|r| r.map(|x| x * LAMBDA)).collect(),
    };
    let rep = disorder_average(n, cfg.seed, |_, rng| d.realize(rng))?;
    let rows: Vec<Vec<String>> = p
        .probes
        .iter()
        .zip(&rep.points)
        .map(|(r, e)| {
            vec![
                num(r[0]),
                num(r[1]),
                num(r[2]),
                num(e.mean_intensity),
                num(e.coherent),
                num(e.incoherent),
                num(e.intensity_stderr),
            ]
        })
        .collect();
    out.csv(
        "probes.csv",
        &[
            "x [lambda]",
            "y [lambda]",
            "z [lambda]",
            "intensity [gamma^2]",
            "coherent [gamma^2]",
            "incoherent [gamma^2]",
            "intensity_stderr [gamma^2]",
        ],
        &rows,
    )?;
    out.json("disorder_summary.json", &rep)?;
    Ok(Status::ok(format!(
        "disorder: <|t|^2> = {:.6} ± {:.2e}, |<t>|^2 = {:.6}, {} failed",
        rep.transmittance,
        rep.transmittance_stderr,
        rep.t_mean.norm_sqr(),
        rep.failed
    )))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChecksParams {
    /// Sheet distances [λ] for the planar-field checks.
    #[serde(default = "default_xs")]
    xs: Vec<f64>,
    /// Lattice spacing [λ].
    #[serde(default = "default_a")]
    a: f64,
    /// Disk radius [λ].
    #[serde(default = "default_rho_max")]
    rho_max: f64,
    #[serde(default = "default_configs")]
    rate_configs: usize,
    #[serde(default = "default_grid")]
    closure_grid: usize,
}

fn default_xs() -> Vec<f64> {
    vec![0.3, 1.0, 2.5]
}

fn default_a() -> f64 {
    0.68
}

fn default_rho_max() -> f64 {
    200.0
}

fn default_configs() -> usize {
    10
}

fn default_grid() -> usize {
    50
}

#[derive(Serialize)]
struct Check {
    name: String,
    value: f64,
    tolerance: f64,
}

impl Check {
    fn pass(&self) -> bool {
        self.value < self.tolerance
    }
}

fn rate_check(seed: u64, k: usize) -> Result<f64, CliError> {
    let mut rng = stream(seed, k as u64);
    let n = rng.gen_range(1..=5);
    let pos: Vec<Vec3> = (0..n).map(|_| [0, 1, 2].map(|_| rng.gen_range(-0.5..0.5) * LAMBDA)).collect();
    let scheme = if rng.gen_bool(0.5) { LevelScheme::ZeroToOne } else { LevelScheme::two_level([0.0, 1.0, 0.0]) };
    let sys = LliSystem::new(Geometry::new(pos)?, scheme)?;
    let m = sys.dim();
    let a = CMat::from_shape_fn((m, m), |_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let corr = a.t().mapv(|x| x.conj()).dot(&a);
    let s = CVec::zeros(m);
    let nc = sys.channels_per_atom();
    let formula = scattering_rates(&sys.coupling.gamma, &corr, &s, nc)?.total;
    let quad = rate_by_quadrature(&sys.geometry.positions, &sys.channels, &corr, 48, 96)?;
    Ok(((formula - quad) / formula).abs())
}

fn checks(cfg: &Config, out: &mut Outputs) -> Result<Status, CliError> {
    let p: ChecksParams = cfg.params()?;
    let a = p.a * LAMBDA;
    let mut list = Vec::new();
    for &x in &p.xs {
        let c = planar_checks(x * LAMBDA, a, p.rho_max * LAMBDA)?;
        list.push(Check { name: format!("disk_integral x={x}"), value: c.disk_rel_err, tolerance: 1e-3 });
        list.push(Check { name: format!("f_recursion x={x}"), value: c.recursion_err, tolerance: 1e-8 });
        list.push(Check { name: format!("f_identity x={x}"), value: c.identity_err, tolerance: 1e-8 });
        list.push(Check { name: format!("gamma_1d a={}", p.a), value: c.gamma_1d_rel_err, tolerance: 1e-4 });
    }
    for k in 0..p.rate_configs {
        list.push(Check {
            name: format!("rate_quadrature config={k}"),
            value: rate_check(cfg.seed, k)?,
            tolerance: 1e-6,
        });
    }
    if p.closure_grid > 0 {
        let mode = UniformMode::from_lattice(a, [0.0, 1.0, 0.0])?;
        let n = p.closure_grid;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let d = -10.0 + 20.0 * i as f64 / (n.max(2) - 1) as f64;
            for j in 0..n {
                let ir = 10f64.powf(-2.0 + 4.0 * j as f64 / (n.max(2) - 1) as f64);
                let rabi = C64::new(rabi_for_intensity(ir), 0.0);
                for sol in uniform_steady_state(d, rabi, mode.omega, mode.gamma)? {
                    worst = worst.max(rt_beyond_lli(d, mode.omega, mode.gamma, rabi, &sol)?.residual.abs());
                }
            }
        }
        list.push(Check { name: "energy_closure".into(), value: worst, tolerance: 1e-10 });
    }
    let rows: Vec<Vec<String>> =
        list.iter().map(|c| vec![c.name.clone(), num(c.value), num(c.tolerance), b(c.pass())]).collect();
    out.csv("checks.csv", &["check", "value [1]", "tolerance [1]", "pass"], &rows)?;
    let failed: Vec<&str> = list.iter().filter(|c| !c.pass()).map(|c| c.name.as_str()).collect();
    Ok(Status {
        passed: failed.is_empty(),
        summary: if failed.is_empty() {
            format!("checks: all {} passed", list.len())
        } else {
            format!("checks: {} of {} failed: {}", failed.len(), list.len(), failed.join(", "))
        },
    })
}
