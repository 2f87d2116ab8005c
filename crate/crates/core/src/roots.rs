//! Scalar root finding for strictly monotone functions.
//!
//! Every implicit relation in this crate (current from voltage, voltage from
//! current, the on-curve MPP condition) reduces to a strictly increasing scalar
//! residual, so one safeguarded Newton iteration serves them all.

use crate::error::{Error, Result};

pub(crate) const MAX_ITER: usize = 200;

/// Residual evaluation: value, derivative, and whether the evaluation was
/// clamped (the value is then only trustworthy as a sign).
#[derive(Debug, Clone, Copy)]
pub(crate) struct Eval {
    pub value: f64,
    pub slope: f64,
    pub clamped: bool,
}

/// Finds the root of a strictly increasing `f` starting from `guess`.
///
/// `lo`/`hi` is an initial bracket; it is widened geometrically if the sign
/// condition `f(lo) < 0 < f(hi)` does not hold. Newton steps that leave the
/// bracket, or that come from clamped evaluations, fall back to bisection.
/// Converges when `|f| <= tol(x)`, then takes one polishing Newton step.
pub(crate) fn increasing_root(
    mut f: impl FnMut(f64) -> Eval,
    guess: f64,
    mut lo: f64,
    mut hi: f64,
    tol: impl Fn(f64) -> f64,
) -> Result<f64> {
    let mut widen = 0;
    while f(lo).value > 0.0 {
        let w = (hi - lo).max(1.0);
        lo -= w;
        widen += 1;
        if widen > 64 || !lo.is_finite() {
            return Err(Error::domain("no lower bracket for increasing root"));
        }
    }
    widen = 0;
    while f(hi).value < 0.0 {
        let w = (hi - lo).max(1.0);
        hi += w;
        widen += 1;
        if widen > 64 || !hi.is_finite() {
            return Err(Error::domain("no upper bracket for increasing root"));
        }
    }

    let mut x = if guess.is_finite() && guess > lo && guess < hi {
        guess
    } else {
        0.5 * (lo + hi)
    };
    let mut last = f64::INFINITY;
    let mut prev_step = hi - lo;
    for _ in 0..MAX_ITER {
        let e = f(x);
        if !e.value.is_finite() {
            return Err(Error::NonFinite("root residual"));
        }
        last = e.value;
        if !e.clamped && e.value.abs() <= tol(x) {
            if e.slope > 0.0 {
                let polished = x - e.value / e.slope;
                if polished > lo && polished < hi {
                    return Ok(polished);
                }
            }
            return Ok(x);
        }
        if e.value < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = if e.clamped || e.slope <= 0.0 {
            f64::NAN
        } else {
            x - e.value / e.slope
        };
        let next = if newton.is_finite() && newton > lo && newton < hi && 2.0 * (newton - x).abs() <= prev_step {
            newton
        } else {
            0.5 * (lo + hi)
        };
        prev_step = (next - x).abs();
        x = next;
        if hi - lo <= f64::EPSILON * x.abs().max(1.0) {
            let e = f(x);
            if !e.clamped && e.value.abs() <= tol(x).max(1e3 * f64::EPSILON) {
                return Ok(x);
            }
            last = e.value;
            break;
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITER,
        residual: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic(x: f64) -> Eval {
        Eval {
            value: x * x * x + x - 3.0,
            slope: 3.0 * x * x + 1.0,
            clamped: false,
        }
    }

    #[test]
    fn finds_cubic_root() {
        let r = increasing_root(cubic, 0.0, -1.0, 1.0, |_| 1e-14).unwrap();
        assert!((r * r * r + r - 3.0).abs() < 1e-13);
    }

    #[test]
    fn widens_bracket() {
        let r = increasing_root(|x| Eval { value: x - 1e4, slope: 1.0, clamped: false }, 0.0, 0.0, 1.0, |_| 1e-9)
            .unwrap();
        assert!((r - 1e4).abs() < 1e-9);
    }

    #[test]
    fn clamped_evaluations_bisect() {
        // exp overflows far right; clamp it and make sure we still land on ln(5)
        let f = |x: f64| {
            let arg = x.min(700.0);
            Eval {
                value: arg.exp() - 5.0,
                slope: arg.exp(),
                clamped: x > 700.0,
            }
        };
        let r = increasing_root(f, 2000.0, -10.0, 5000.0, |_| 1e-12).unwrap();
        assert!((r - 5f64.ln()).abs() < 1e-12);
    }
}
