//! Run configuration. Lengths are in wavelengths, detunings and rates in
//! units of the single-atom linewidth γ, intensities in units of `I_sat`.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use coopoptics::geometry::{wannier_width, Geometry};
use coopoptics::kernel::LevelScheme;
use coopoptics::lli::Drive;
use coopoptics::{rabi_for_intensity, Vec3, LAMBDA};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Spectrum,
    Eigen,
    Transmit,
    Bistab,
    Bands,
    Stack,
    Qme,
    Traj,
    G2,
    Disorder,
    Checks,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometrySpec {
    /// `ny × nz` square lattice of spacing `a` [λ] in the `x = 0` plane.
    Square {
        ny: usize,
        nz: usize,
        a: f64,
    },
    /// `n` atoms along `y` with spacing `a` [λ].
    Chain {
        n: usize,
        a: f64,
    },
    Ring {
        n: usize,
        radius: f64,
    },
    /// Explicit positions [λ].
    Positions {
        positions: Vec<Vec3>,
    },
    /// Geometry JSON file with positions in units of `1/k`.
    File {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayersSpec {
    pub count: usize,
    /// Layer separation [λ].
    pub d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransitionSpec {
    TwoLevel {
        #[serde(default = "default_dipole")]
        dipole: Vec3,
    },
    /// `J = 0 → 1` with optional Cartesian level shifts [γ].
    ZeroToOne {
        #[serde(default)]
        shifts: [f64; 3],
    },
}

fn default_dipole() -> Vec3 {
    [0.0, 1.0, 0.0]
}

impl Default for TransitionSpec {
    fn default() -> Self {
        TransitionSpec::TwoLevel { dipole: default_dipole() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriveSpec {
    PlaneWave {
        #[serde(default = "default_direction")]
        direction: Vec3,
        #[serde(default = "default_dipole")]
        polarization: Vec3,
        /// `I/I_sat`
        intensity: f64,
    },
    Gaussian {
        /// Waist [λ].
        waist: f64,
        #[serde(default = "default_dipole")]
        polarization: Vec3,
        intensity: f64,
    },
}

fn default_direction() -> Vec3 {
    [1.0, 0.0, 0.0]
}

impl Default for DriveSpec {
    fn default() -> Self {
        DriveSpec::PlaneWave { direction: default_direction(), polarization: default_dipole(), intensity: 0.02 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum GridSpec {
    Range { start: f64, stop: f64, points: usize },
    Values(Vec<f64>),
}

impl GridSpec {
    pub fn values(&self, path: &str) -> Result<Vec<f64>, CliError> {
        match self {
            GridSpec::Values(v) if !v.is_empty() => Ok(v.clone()),
            GridSpec::Values(_) => Err(CliError::Config(format!("{path}: empty grid"))),
            GridSpec::Range { points: 0, .. } => Err(CliError::Config(format!("{path}.points: must be ≥ 1"))),
            GridSpec::Range { start, points: 1, .. } => Ok(vec![*start]),
            GridSpec::Range { start, stop, points } => {
                Ok((0..*points).map(|k| start + (stop - start) * k as f64 / (*points - 1) as f64).collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderSpec {
    /// In-plane width ℓ [λ].
    #[serde(default)]
    pub ell: Option<f64>,
    /// Lattice depth `s` [E_R]; sets ℓ from the Wannier width.
    #[serde(default)]
    pub lattice_depth: Option<f64>,
    /// Out-of-plane width [λ]; defaults to ℓ.
    #[serde(default)]
    pub ell_x: Option<f64>,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
}

fn default_realizations() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Steady-state residual for iterative solvers.
    #[serde(default = "default_steady")]
    pub steady: f64,
    /// Integration horizon for time-marching steady states [1/γ].
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

fn default_steady() -> f64 {
    1e-10
}

fn default_horizon() -> f64 {
    2000.0
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { steady: default_steady(), horizon: default_horizon() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub geometry: Option<GeometrySpec>,
    #[serde(default)]
    pub layers: Option<LayersSpec>,
    #[serde(default)]
    pub transition: TransitionSpec,
    #[serde(default)]
    pub drive: DriveSpec,
    #[serde(default)]
    pub detuning: Option<GridSpec>,
    #[serde(default)]
    pub disorder: Option<DisorderSpec>,
    #[serde(default = "empty_params")]
    pub params: serde_json::Value,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn empty_params() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

/// Deserializes with the failing JSON path in the message.
pub fn parse_at<T: DeserializeOwned>(value: &serde_json::Value, prefix: &str) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let p = e.path().to_string();
        let at = match (prefix.is_empty(), p == ".") {
            (true, _) => p,
            (false, true) => prefix.to_string(),
            (false, false) => format!("{prefix}.{p}"),
        };
        CliError::Config(format!("{at}: {}", e.inner()))
    })
}

/// Reads a config, or the config embedded in a run manifest.
pub fn load(path: &Path) -> Result<Config, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    match value.get("manifest_version") {
        Some(_) => {
            let inner =
                value.get("config").ok_or_else(|| CliError::Config("manifest has no embedded config".into()))?;
            parse_at(inner, "config")
        }
        None => parse_at(&value, ""),
    }
}

impl Config {
    pub fn params<T: DeserializeOwned>(&self) -> Result<T, CliError> {
        parse_at(&self.params, "params")
    }

    pub fn geometry_spec(&self) -> Result<&GeometrySpec, CliError> {
        self.geometry.as_ref().ok_or_else(|| CliError::Config("geometry: required for this scenario".into()))
    }

    /// Positions in units of `1/k`, stacked if `layers` is set.
    pub fn geometry(&self) -> Result<Geometry, CliError> {
        let g = match self.geometry_spec()? {
            GeometrySpec::Square { ny, nz, a } => Geometry::square_lattice(*ny, *nz, a * LAMBDA),
            GeometrySpec::Chain { n, a } => Geometry::square_lattice(*n, 1, a * LAMBDA),
            GeometrySpec::Ring { n, radius } => Geometry::ring(*n, radius * LAMBDA),
            GeometrySpec::Positions { positions } => {
                Geometry::new(positions.iter().map(|p| p.map(|x| x * LAMBDA)).collect())
            }
            GeometrySpec::File { path } => Geometry::load(path),
        }
        .map_err(|e| CliError::Config(format!("geometry: {e}")))?;
        match &self.layers {
            None => Ok(g),
            Some(l) => g.stacked(l.count, l.d * LAMBDA).map_err(|e| CliError::Config(format!("layers: {e}"))),
        }
    }

    /// Lattice spacing [1/k] of a square geometry.
    pub fn spacing(&self) -> Result<f64, CliError> {
        match self.geometry_spec()? {
            GeometrySpec::Square { a, .. } | GeometrySpec::Chain { a, .. } if *a > 0.0 => Ok(a * LAMBDA),
            GeometrySpec::Square { .. } | GeometrySpec::Chain { .. } => {
                Err(CliError::Config("geometry.a: must be positive".into()))
            }
            _ => Err(CliError::Config("geometry: this scenario needs a square lattice".into())),
        }
    }

    pub fn scheme(&self) -> LevelScheme {
        match &self.transition {
            TransitionSpec::TwoLevel { dipole } => LevelScheme::two_level(*dipole),
            TransitionSpec::ZeroToOne { .. } => LevelScheme::ZeroToOne,
        }
    }

    pub fn level_shifts(&self) -> Option<[f64; 3]> {
        match &self.transition {
            TransitionSpec::ZeroToOne { shifts } if shifts.iter().any(|s| *s != 0.0) => Some(*shifts),
            _ => None,
        }
    }

    pub fn intensity(&self) -> f64 {
        match &self.drive {
            DriveSpec::PlaneWave { intensity, .. } | DriveSpec::Gaussian { intensity, .. } => *intensity,
        }
    }

    pub fn drive(&self) -> Result<Drive, CliError> {
        let i = self.intensity();
        if !(i >= 0.0) {
            return Err(CliError::Config("drive.intensity: must be non-negative".into()));
        }
        let amp = rabi_for_intensity(i);
        match &self.drive {
            DriveSpec::PlaneWave { direction, polarization, .. } => Drive::plane_wave(*direction, *polarization, amp),
            DriveSpec::Gaussian { waist, polarization, .. } => Drive::gaussian(waist * LAMBDA, *polarization, amp),
        }
        .map_err(|e| CliError::Config(format!("drive: {e}")))
    }

    pub fn detunings(&self) -> Result<Vec<f64>, CliError> {
        match &self.detuning {
            Some(g) => g.values("detuning"),
            None => Err(CliError::Config("detuning: required for this scenario".into())),
        }
    }

    /// `(ℓ, ℓ_x)` in units of `1/k`.
    pub fn disorder_widths(&self) -> Result<Option<(f64, f64, usize)>, CliError> {
        let Some(d) = &self.disorder else {
            return Ok(None);
        };
        let ell = match (d.ell, d.lattice_depth) {
            (Some(l), None) => l * LAMBDA,
            (None, Some(s)) => {
                wannier_width(self.spacing()?, s).map_err(|e| CliError::Config(format!("disorder: {e}")))?
            }
            _ => return Err(CliError::Config("disorder: give exactly one of ell, lattice_depth".into())),
        };
        let ell_x = d.ell_x.map(|x| x * LAMBDA).unwrap_or(ell);
        if !(ell >= 0.0 && ell_x >= 0.0) {
            return Err(CliError::Config("disorder: widths must be non-negative".into()));
        }
        if d.realizations < 2 {
            return Err(CliError::Config("disorder.realizations: need at least 2".into()));
        }
        Ok(Some((ell, ell_x, d.realizations)))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.tolerances.steady <= 0.0 || self.tolerances.horizon <= 0.0 {
            return Err(CliError::Config("tolerances: must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("threads: must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_field_reports_path() {
        let v: serde_json::Value =
            serde_json::from_str(r#"{"scenario":"eigen","geometry":{"kind":"square","ny":2,"nz":2,"a":0.5,"b":1}}"#)
                .unwrap();
        let e = parse_at::<Config>(&v, "").unwrap_err().to_string();
        assert!(e.contains("geometry"), "{e}");
    }

    #[test]
    fn grid_range() {
        let g = GridSpec::Range { start: -1.0, stop: 1.0, points: 5 };
        assert_eq!(g.values("d").unwrap(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }
}
