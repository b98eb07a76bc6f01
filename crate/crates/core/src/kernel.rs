//! Dipole radiation kernel and pairwise couplings.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::Geometry;
use crate::linalg::CMat;
use crate::{c, normalize3, CVec3, Error, Mat3, Result, Vec3, C64, XI};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Green tensor `G(r)` of the dipole field at `r ≠ 0` (contact term dropped):
/// `G d = (1/4π){(r̂×d)×r̂ e^{ir}/r − [3r̂(r̂·d) − d][i/r² − 1/r³] e^{ir}}`.
pub fn green_tensor(r: Vec3) -> Result<Mat3> {
    let rr = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    if !(rr > 0.0) {
        return Err(Error::InvalidArgument("Green tensor evaluated at r = 0".into()));
    }
    let n = [r[0] / rr, r[1] / rr, r[2] / rr];
    let e = c(0.0, rr).exp();
    let far = e / rr;
    let near = (c(0.0, 1.0 / (rr * rr)) - 1.0 / (rr * rr * rr)) * e;
    let mut g = [[c(0.0, 0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let d = if i == j { 1.0 } else { 0.0 };
            let nn = n[i] * n[j];
            g[i][j] = (far * (d - nn) - near * (3.0 * nn - d)) / FOUR_PI;
        }
    }
    Ok(g)
}

/// `ξ ê_a*·T·ê_b` for a complex tensor.
pub fn project(e_a: &CVec3, t: &Mat3, e_b: &CVec3) -> C64 {
    let mut s = c(0.0, 0.0);
    for i in 0..3 {
        for j in 0..3 {
            s += e_a[i].conj() * t[i][j] * e_b[j];
        }
    }
    s * XI
}

/// Coherent (`Ω`) and dissipative (`γ`) coupling between dipoles `ê_ν` at
/// `r_j` and `ê_μ` at `r_ℓ` with `r = r_j − r_ℓ`:
/// `Ω = ξ ê_ν*·Re G(r)·ê_μ`, `γ = ξ ê_ν*·Im G(r)·ê_μ`.
pub fn pair_coupling(r: Vec3, e_nu: &CVec3, e_mu: &CVec3) -> Result<(C64, C64)> {
    let g = green_tensor(r)?;
    let re = g.map(|row| row.map(|x| c(x.re, 0.0)));
    let im = g.map(|row| row.map(|x| c(x.im, 0.0)));
    Ok((project(e_nu, &re, e_mu), project(e_nu, &im, e_mu)))
}

/// Spherical unit vectors `ê_{−1}, ê_0, ê_{+1}` (index `ν + 1`) with
/// `ê_± = ∓(x̂ ± iŷ)/√2`, `ê_0 = ẑ`.
pub fn spherical_basis() -> [CVec3; 3] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [
        [c(s, 0.0), c(0.0, -s), c(0.0, 0.0)],
        [c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)],
        [c(-s, 0.0), c(0.0, -s), c(0.0, 0.0)],
    ]
}

/// Internal level structure of each atom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LevelScheme {
    /// One excited level; the dipole matrix element has fixed orientation.
    TwoLevel { dipole: CVec3 },
    /// `J = 0 → J' = 1`: three excited levels. Amplitudes are carried in the
    /// Cartesian basis `x̂, ŷ, ẑ`, which keeps `H` complex symmetric.
    ZeroToOne,
}

impl LevelScheme {
    pub fn two_level(dipole: Vec3) -> Self {
        LevelScheme::TwoLevel { dipole: crate::real3(dipole) }
    }

    /// Unit polarization vectors of the channels of one atom.
    pub fn channels(&self) -> Result<Vec<CVec3>> {
        match self {
            LevelScheme::TwoLevel { dipole } => Ok(vec![normalize3(dipole)?]),
            LevelScheme::ZeroToOne => {
                Ok(vec![crate::real3([1.0, 0.0, 0.0]), crate::real3([0.0, 1.0, 0.0]), crate::real3([0.0, 0.0, 1.0])])
            }
        }
    }

    pub fn channels_per_atom(&self) -> usize {
        match self {
            LevelScheme::TwoLevel { .. } => 1,
            LevelScheme::ZeroToOne => 3,
        }
    }
}

/// Coupling matrices over channels `idx(j, c) = n_c·j + c`. Both matrices are
/// Hermitian; the diagonal blocks are `Ω = 0` and `γ = 1`.
#[derive(Clone, Debug)]
pub struct Coupling {
    pub omega: CMat,
    pub gamma: CMat,
    pub channels_per_atom: usize,
}

impl Coupling {
    /// `H = Ω + iγ`.
    pub fn h(&self) -> CMat {
        &self.omega + &self.gamma.mapv(|x| x * c(0.0, 1.0))
    }
}

pub fn coupling_matrix(geometry: &Geometry, scheme: &LevelScheme) -> Result<Coupling> {
    let chans = scheme.channels()?;
    let nc = chans.len();
    let n = geometry.len();
    let m = n * nc;
    let pos = &geometry.positions;
    let rows: Vec<Vec<(C64, C64)>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut row = vec![(c(0.0, 0.0), c(0.0, 0.0)); n * nc * nc];
            for l in 0..n {
                if l == j {
                    continue;
                }
                let r = [pos[j][0] - pos[l][0], pos[j][1] - pos[l][1], pos[j][2] - pos[l][2]];
                let g = green_tensor(r).expect("distinct atoms");
                let re = g.map(|row| row.map(|x| c(x.re, 0.0)));
                let im = g.map(|row| row.map(|x| c(x.im, 0.0)));
                for a in 0..nc {
                    for b in 0..nc {
                        row[(l * nc + b) * nc + a] =
                            (project(&chans[a], &re, &chans[b]), project(&chans[a], &im, &chans[b]));
                    }
                }
            }
            row
        })
        .collect();
    let mut omega = Array2::zeros((m, m));
    let mut gamma = Array2::zeros((m, m));
    for (j, row) in rows.iter().enumerate() {
        for l in 0..n {
            for a in 0..nc {
                for b in 0..nc {
                    let (o, g) = if l == j {
                        (c(0.0, 0.0), c(if a == b { 1.0 } else { 0.0 }, 0.0))
                    } else {
                        row[(l * nc + b) * nc + a]
                    };
                    omega[[j * nc + a, l * nc + b]] = o;
                    gamma[[j * nc + a, l * nc + b]] = g;
                }
            }
        }
    }
    Ok(Coupling { omega, gamma, channels_per_atom: nc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::LAMBDA;
    use std::f64::consts::PI;

    #[test]
    fn half_wavelength_pair_along_z_with_x_dipoles() {
        let ex = crate::real3([1.0, 0.0, 0.0]);
        let (o, g) = pair_coupling([0.0, 0.0, LAMBDA / 2.0], &ex, &ex).unwrap();
        assert!((g.re + 3.0 / (2.0 * PI * PI)).abs() < 1e-12);
        assert!((o.re - 1.5 * (-1.0 / PI + 1.0 / PI.powi(3))).abs() < 1e-12);
        assert!(o.im.abs() < 1e-15 && g.im.abs() < 1e-15);
    }

    #[test]
    fn origin_is_an_error() {
        assert!(green_tensor([0.0; 3]).is_err());
    }

    #[test]
    fn short_distance_limit_of_dissipative_part() {
        // ξ Im G(r) → γ δ as r → 0
        let e = crate::real3([0.0, 1.0, 0.0]);
        let (_, g) = pair_coupling([1e-4, 0.0, 0.0], &e, &e).unwrap();
        assert!((g.re - 1.0).abs() < 1e-7);
    }

    #[test]
    fn spherical_basis_is_orthonormal() {
        let b = spherical_basis();
        for i in 0..3 {
            for j in 0..3 {
                let s: C64 = (0..3).map(|k| b[i][k].conj() * b[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((s - want).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn three_level_matrix_is_complex_symmetric() {
        let g = Geometry::new(vec![[0.0, 0.0, 0.0], [0.3, 1.1, -0.7], [2.0, 0.2, 0.9]]).unwrap();
        let cp = coupling_matrix(&g, &LevelScheme::ZeroToOne).unwrap();
        let h = cp.h();
        for i in 0..9 {
            for j in 0..9 {
                assert!((h[[i, j]] - h[[j, i]]).norm() < 1e-14);
            }
        }
        let tr: C64 = (0..9).map(|i| h[[i, i]]).sum();
        assert!((tr - c(0.0, 9.0)).norm() < 1e-14);
    }
}
