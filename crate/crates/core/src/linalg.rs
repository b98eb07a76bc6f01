//! Dense complex linear algebra on top of LAPACK.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use ndarray_linalg::{Eig, Eigh, Factorize, Inverse, ReciprocalConditionNum, Solve, UPLO};

use crate::{Error, Result, C64};

pub type CMat = Array2<C64>;
pub type CVec = Array1<C64>;

/// Systems with reciprocal condition number below this are refused.
pub const RCOND_MIN: f64 = 1e-12;

/// Solves `a x = b`, refusing ill-conditioned systems.
pub fn solve(a: &CMat, b: &CVec) -> Result<CVec> {
    let lu = a.factorize()?;
    let rc = lu.rcond()?;
    if !(rc > RCOND_MIN) {
        return Err(Error::IllConditioned(rc));
    }
    Ok(lu.solve(b)?)
}

/// Right eigenpairs of a general complex matrix (columns of the second value).
pub fn eig(a: &CMat) -> Result<(CVec, CMat)> {
    Ok(a.eig()?)
}

/// Eigen-decomposition of a Hermitian matrix, ascending eigenvalues.
pub fn eigh(a: &CMat) -> Result<(Array1<f64>, CMat)> {
    Ok(a.eigh(UPLO::Upper)?)
}

pub fn inverse(a: &CMat) -> Result<CMat> {
    Ok(a.inv()?)
}

pub fn identity(n: usize) -> CMat {
    CMat::eye(n)
}

/// Bilinear (non-conjugated) product `uᵀ v`.
pub fn dot_t(u: ArrayView1<C64>, v: ArrayView1<C64>) -> C64 {
    u.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
}

/// Hermitian product `u† v`.
pub fn dot_h(u: ArrayView1<C64>, v: ArrayView1<C64>) -> C64 {
    u.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm1(a: ArrayView2<C64>) -> f64 {
    (0..a.ncols()).map(|j| a.column(j).iter().map(|x| x.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Trace distance `½‖a − b‖₁` between two Hermitian matrices.
pub fn trace_distance(a: &CMat, b: &CMat) -> Result<f64> {
    let d = a - b;
    let h = (&d + &d.t().mapv(|x| x.conj())) * C64::new(0.5, 0.0);
    let (ev, _) = eigh(&h)?;
    Ok(0.5 * ev.iter().map(|x| x.abs()).sum::<f64>())
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant.
pub fn expm(a: &CMat) -> Result<CMat> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371920351148152;
    let n = a.nrows();
    let nrm = norm1(a.view());
    let s = if nrm > THETA13 { (nrm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a.mapv(|x| x / 2f64.powi(s));
    let id = CMat::eye(n);
    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);
    let r = |x: f64| C64::new(x, 0.0);
    let u_in = &a6 * r(B[13]) + &a4 * r(B[11]) + &a2 * r(B[9]);
    let u = a.dot(&(a6.dot(&u_in) + &a6 * r(B[7]) + &a4 * r(B[5]) + &a2 * r(B[3]) + &id * r(B[1])));
    let v_in = &a6 * r(B[12]) + &a4 * r(B[10]) + &a2 * r(B[8]);
    let v = a6.dot(&v_in) + &a6 * r(B[6]) + &a4 * r(B[4]) + &a2 * r(B[2]) + &id * r(B[0]);
    let p = &v + &u;
    let q = &v - &u;
    let mut out = solve_many(&q, &p)?;
    for _ in 0..s {
        out = out.dot(&out);
    }
    Ok(out)
}

/// Solves `a X = b` for a matrix right-hand side.
pub fn solve_many(a: &CMat, b: &CMat) -> Result<CMat> {
    let lu = a.factorize()?;
    let mut out = CMat::zeros(b.raw_dim());
    for j in 0..b.ncols() {
        let col = lu.solve(&b.column(j).to_owned())?;
        out.column_mut(j).assign(&col);
    }
    Ok(out)
}
