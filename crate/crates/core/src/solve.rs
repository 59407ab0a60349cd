//! Bracketed root finding and 1-D maximization helpers.

use crate::error::{Error, Result};

/// Bisection for the unique upcrossing of `f`: requires `f(lo) < 0 <= f(hi)`.
/// Runs until the bracket width is below `xtol`, then returns the midpoint.
pub(crate) fn bisect_upcrossing<F: Fn(f64) -> f64>(
    f: &F,
    mut lo: f64,
    mut hi: f64,
    xtol: f64,
) -> Result<f64> {
    let flo = f(lo);
    if flo >= 0.0 {
        return Err(Error::numerical(format!(
            "bisection bracket invalid: f({lo}) = {flo} >= 0"
        )));
    }
    if f(hi) < 0.0 {
        return Err(Error::numerical(format!(
            "bisection bracket invalid: f({hi}) < 0"
        )));
    }
    while hi - lo > xtol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Golden-section maximization of a unimodal `f` on `[a, b]`.
/// Terminates when the bracket is below `xtol * max(1, |x|)`.
pub(crate) fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, xtol: f64) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INVPHI * (b - a);
    let mut x2 = a + INVPHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if b - a <= xtol * a.abs().max(1.0) {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INVPHI * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INVPHI * (b - a);
            f1 = f(x1);
        }
    }
    let xm = 0.5 * (a + b);
    (xm, f(xm))
}

/// Golden-section minimization on `[a, b]`.
pub(crate) fn golden_min<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, xtol: f64) -> (f64, f64) {
    let (x, neg) = golden_max(&|x| -f(x), a, b, xtol);
    (x, -neg)
}
