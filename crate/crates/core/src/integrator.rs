//! Classical fixed-step fourth-order Runge–Kutta.

use crate::error::Result;

/// One RK4 step of `y' = f(t, y)`. The right-hand side may fail (e.g. an
/// algebraic constraint that cannot be solved at a stage); the error is
/// passed through unchanged.
pub fn rk4_step<const N: usize>(
    y: &[f64; N],
    t: f64,
    dt: f64,
    mut f: impl FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
) -> Result<[f64; N]> {
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * dt, &axpy(y, 0.5 * dt, &k1))?;
    let k3 = f(t + 0.5 * dt, &axpy(y, 0.5 * dt, &k2))?;
    let k4 = f(t + dt, &axpy(y, dt, &k3))?;
    let mut out = *y;
    for i in 0..N {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        out[i] += h * k[i];
    }
    out
}
