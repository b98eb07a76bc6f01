//! Atom positions: lattices, rings, layer stacks and thermal disorder.
//!
//! Positions are stored in units of `1/k`; the JSON form uses units of `λ`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3, LAMBDA};

/// Separations below this (in `1/k`) count as coincident atoms.
pub const MIN_SEPARATION: f64 = 1e-6;

/// Disorder sampling gives up after this many rejected draws.
pub const MAX_RESAMPLES: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub positions: Vec<Vec3>,
    pub labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct GeometryJson {
    positions: Vec<Vec3>,
    #[serde(default)]
    labels: Vec<String>,
}

fn dist(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn first_coincident(pos: &[Vec3]) -> Option<(usize, usize)> {
    for i in 0..pos.len() {
        for j in i + 1..pos.len() {
            if dist(&pos[i], &pos[j]) < MIN_SEPARATION {
                return Some((i, j));
            }
        }
    }
    None
}

impl Geometry {
    /// Builds a geometry from positions in `1/k`, labelling atoms by index.
    pub fn new(positions: Vec<Vec3>) -> Result<Self> {
        let labels = (0..positions.len()).map(|i| i.to_string()).collect();
        Self::with_labels(positions, labels)
    }

    pub fn with_labels(positions: Vec<Vec3>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != positions.len() {
            return Err(Error::InvalidArgument(format!("{} labels for {} positions", labels.len(), positions.len())));
        }
        if positions.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite position".into()));
        }
        if let Some((i, j)) = first_coincident(&positions) {
            return Err(Error::Coincident(i, j));
        }
        Ok(Geometry { positions, labels })
    }

    /// `ny × nz` square lattice of spacing `a` in the `yz` plane, centred on
    /// the origin. Atom `r·nz + c` sits in row `r` (along `y`), column `c`.
    pub fn square_lattice(ny: usize, nz: usize, a: f64) -> Result<Self> {
        if ny == 0 || nz == 0 || !(a > 0.0) {
            return Err(Error::InvalidArgument("lattice needs n ≥ 1 and a > 0".into()));
        }
        let mut positions = Vec::with_capacity(ny * nz);
        let mut labels = Vec::with_capacity(ny * nz);
        for r in 0..ny {
            for c in 0..nz {
                let y = (r as f64 - (ny as f64 - 1.0) / 2.0) * a;
                let z = (c as f64 - (nz as f64 - 1.0) / 2.0) * a;
                positions.push([0.0, y, z]);
                labels.push(format!("{r},{c}"));
            }
        }
        Self::with_labels(positions, labels)
    }

    /// `n` atoms on a ring of the given radius in the `yz` plane, atom `ℓ` at
    /// angle `2πℓ/n`.
    pub fn ring(n: usize, radius: f64) -> Result<Self> {
        if n == 0 || !(radius > 0.0) {
            return Err(Error::InvalidArgument("ring needs n ≥ 1 and radius > 0".into()));
        }
        let positions = (0..n)
            .map(|l| {
                let phi = 2.0 * std::f64::consts::PI * l as f64 / n as f64;
                [0.0, radius * phi.cos(), radius * phi.sin()]
            })
            .collect();
        Self::new(positions)
    }

    /// Copies of this geometry at `x = 0, d, 2d, …`.
    pub fn stacked(&self, layers: usize, d: f64) -> Result<Self> {
        if layers == 0 {
            return Err(Error::InvalidArgument("need at least one layer".into()));
        }
        let mut positions = Vec::with_capacity(layers * self.len());
        let mut labels = Vec::with_capacity(layers * self.len());
        for l in 0..layers {
            for (p, lab) in self.positions.iter().zip(&self.labels) {
                positions.push([p[0] + l as f64 * d, p[1], p[2]]);
                labels.push(format!("L{l}:{lab}"));
            }
        }
        Self::with_labels(positions, labels)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn min_separation(&self) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                m = m.min(dist(&self.positions[i], &self.positions[j]));
            }
        }
        m
    }

    /// Index of the atom closest to the given point.
    pub fn nearest(&self, r: Vec3) -> Option<usize> {
        (0..self.len()).min_by(|&i, &j| dist(&self.positions[i], &r).total_cmp(&dist(&self.positions[j], &r)))
    }

    pub fn to_json(&self) -> Result<String> {
        let g = GeometryJson {
            positions: self.positions.iter().map(|p| [p[0] / LAMBDA, p[1] / LAMBDA, p[2] / LAMBDA]).collect(),
            labels: self.labels.clone(),
        };
        Ok(serde_json::to_string_pretty(&g)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: GeometryJson = serde_json::from_str(s)?;
        let positions: Vec<Vec3> = g.positions.iter().map(|p| [p[0] * LAMBDA, p[1] * LAMBDA, p[2] * LAMBDA]).collect();
        if g.labels.is_empty() {
            Self::new(positions)
        } else {
            Self::with_labels(positions, g.labels)
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Width `ℓ = a s^{−1/4}/π` of the ground-state density in a lattice site of
/// depth `s` recoil energies.
pub fn wannier_width(a: f64, s: f64) -> Result<f64> {
    if !(a > 0.0) || !(s > 0.0) {
        return Err(Error::InvalidArgument("wannier width needs a > 0 and s > 0".into()));
    }
    Ok(a * s.powf(-0.25) / std::f64::consts::PI)
}

/// Displaces every atom of `base` with density `∝ exp(−(y²+z²)/ℓ² − x²/ℓ_x²)`,
/// i.e. independent normal deviates of standard deviation `ℓ/√2` per axis.
/// Draws that bring two atoms closer than [`MIN_SEPARATION`] are repeated.
pub fn sample_disordered<R: Rng + ?Sized>(base: &Geometry, ell: f64, ell_x: f64, rng: &mut R) -> Result<Geometry> {
    if !(ell >= 0.0) || !(ell_x >= 0.0) {
        return Err(Error::InvalidArgument("disorder widths must be non-negative".into()));
    }
    let sd = |w: f64| Normal::new(0.0, w / std::f64::consts::SQRT_2).expect("finite width");
    let (n_in, n_x) = (sd(ell), sd(ell_x));
    for _ in 0..MAX_RESAMPLES {
        let positions: Vec<Vec3> = base
            .positions
            .iter()
            .map(|p| [p[0] + n_x.sample(rng), p[1] + n_in.sample(rng), p[2] + n_in.sample(rng)])
            .collect();
        if first_coincident(&positions).is_none() {
            return Ok(Geometry { positions, labels: base.labels.clone() });
        }
    }
    Err(Error::SamplingFailed(MAX_RESAMPLES))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn lattice_is_centred_and_row_major() {
        let g = Geometry::square_lattice(3, 4, 2.0).unwrap();
        assert_eq!(g.len(), 12);
        let cy: f64 = g.positions.iter().map(|p| p[1]).sum();
        let cz: f64 = g.positions.iter().map(|p| p[2]).sum();
        assert!(cy.abs() < 1e-12 && cz.abs() < 1e-12);
        assert_eq!(g.positions[1], [0.0, -2.0, -1.0]);
        assert_eq!(g.positions[4], [0.0, 0.0, -3.0]);
        assert!((g.min_separation() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_in_wavelength_units() {
        let g = Geometry::square_lattice(2, 2, 0.5 * LAMBDA).unwrap();
        let s = g.to_json().unwrap();
        assert!(s.contains("0.25"));
        let h = Geometry::from_json(&s).unwrap();
        for (a, b) in g.positions.iter().zip(&h.positions) {
            assert!(dist(a, b) < 1e-12);
        }
        assert_eq!(g.labels, h.labels);
    }

    #[test]
    fn coincident_atoms_rejected() {
        assert!(matches!(Geometry::new(vec![[0.0; 3], [0.0, 0.0, 1e-9]]), Err(Error::Coincident(0, 1))));
    }

    #[test]
    fn wannier_example() {
        let a = 0.532 * LAMBDA;
        let l = wannier_width(a, 300.0).unwrap();
        assert!((l / a - 300f64.powf(-0.25) / std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn disorder_variance() {
        let base = Geometry::square_lattice(30, 30, 10.0).unwrap();
        let mut rng = stream(1, 0);
        let g = sample_disordered(&base, 2.0, 0.0, &mut rng).unwrap();
        let var: f64 = g.positions.iter().zip(&base.positions).map(|(p, q)| (p[1] - q[1]).powi(2)).sum::<f64>() / 900.0;
        // ℓ²/2 = 2
        assert!((var - 2.0).abs() < 0.3, "{var}");
        assert!(g.positions.iter().all(|p| p[0] == 0.0));
    }
}
