//! Adaptive Dormand–Prince integration of complex-valued systems.

use ode_solvers::{dop_shared::IntegrationError, DVector, Dopri5, OutputType, System};

use crate::{Error, Result, C64};

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: u32,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-10, atol: 1e-12, max_steps: 5_000_000 }
    }
}

struct Wrap<'a, F> {
    f: &'a F,
}

impl<'a, F> System<f64, DVector<f64>> for Wrap<'a, F>
where
    F: Fn(f64, &[C64], &mut [C64]),
{
    fn system(&self, t: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        let ys: &[C64] = bytemuck::cast_slice(y.as_slice());
        let ds: &mut [C64] = bytemuck::cast_slice_mut(dy.as_mut_slice());
        (self.f)(t, ys, ds);
    }
}

/// Integrates `ẏ = f(t, y)` from `times[0]` and returns the state at every
/// entry of `times` (which must be non-decreasing).
pub fn integrate<F>(f: F, y0: &[C64], times: &[f64], opts: OdeOptions) -> Result<Vec<Vec<C64>>>
where
    F: Fn(f64, &[C64], &mut [C64]),
{
    if times.is_empty() {
        return Ok(Vec::new());
    }
    if times.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::InvalidArgument("output times must be non-decreasing".into()));
    }
    let mut out = Vec::with_capacity(times.len());
    let mut y: Vec<C64> = y0.to_vec();
    out.push(y.clone());
    for w in times.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 > t0 {
            y = step(&f, &y, t0, t1, opts)?;
        }
        out.push(y.clone());
    }
    Ok(out)
}

fn step<F>(f: &F, y: &[C64], t0: f64, t1: f64, opts: OdeOptions) -> Result<Vec<C64>>
where
    F: Fn(f64, &[C64], &mut [C64]),
{
    let flat: &[f64] = bytemuck::cast_slice(y);
    let y0 = DVector::from_column_slice(flat);
    let mut solver = Dopri5::from_param(
        Wrap { f },
        t0,
        t1,
        t1 - t0,
        y0,
        opts.rtol,
        opts.atol,
        0.9,
        0.04,
        0.2,
        10.0,
        t1 - t0,
        0.0,
        opts.max_steps,
        u32::MAX,
        OutputType::Sparse,
    );
    solver.integrate().map_err(|e| match e {
        IntegrationError::StepSizeUnderflow { x } => {
            Error::Integration(format!("step size underflow at t = {x:.6e} (stiff system)"))
        }
        other => Error::Integration(other.to_string()),
    })?;
    let t_last = solver.x_out().last().copied().unwrap_or(f64::NAN);
    if !((t_last - t1).abs() <= 1e-9 * t1.abs().max(1.0)) {
        return Err(Error::Integration(format!("integrator stopped at t = {t_last:.6e}")));
    }
    let last = solver.y_out().last().ok_or_else(|| Error::Integration("no output produced".into()))?;
    let cs: &[C64] = bytemuck::cast_slice(last.as_slice());
    Ok(cs.to_vec())
}
