//! Special functions on the number basis: associated Laguerre polynomials,
//! their orthonormal "Laguerre functions", log-factorials and the Bessel
//! function J0 on the complex plane.

use crate::error::{Error, Result};
use crate::C64;

/// Associated Laguerre polynomial `L_n^alpha(x)` by the three-term recurrence
/// `(k+1) L_{k+1} = (2k+1+alpha-x) L_k - (k+alpha) L_{k-1}`.
pub fn assoc_laguerre(n: usize, alpha: usize, x: f64) -> f64 {
    let a = alpha as f64;
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + a - x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + a - x) * cur - (kf + a) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Plain Laguerre polynomial `L_n(x) = L_n^0(x)`.
pub fn laguerre(n: usize, x: f64) -> f64 {
    assoc_laguerre(n, 0, x)
}

/// Values `L_0(x), ..., L_{len-1}(x)`.
pub fn laguerre_table(len: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    if len == 0 {
        return out;
    }
    out.push(1.0);
    if len == 1 {
        return out;
    }
    out.push(1.0 - x);
    for k in 1..len - 1 {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 - x) * out[k] - kf * out[k - 1]) / (kf + 1.0);
        out.push(next);
    }
    out
}

/// Orthonormal Laguerre functions
/// `phi_j(x) = sqrt(j!/(j+delta)!) x^{delta/2} L_j^delta(x)` for `j < len`.
///
/// These satisfy `int_0^inf phi_i phi_j e^{-x} dx = delta_ij`. The recurrence
/// is run directly on the normalized values, which keeps the factorials out of
/// the arithmetic.
pub fn laguerre_functions(delta: usize, len: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    if len == 0 {
        return out;
    }
    let d = delta as f64;
    let phi0 = if delta == 0 {
        1.0
    } else {
        (0.5 * d * x.ln() - 0.5 * ln_factorial(delta)).exp()
    };
    let phi0 = if x == 0.0 && delta > 0 { 0.0 } else { phi0 };
    out.push(phi0);
    if len == 1 {
        return out;
    }
    out.push((1.0 + d - x) * phi0 / (1.0 + d).sqrt());
    for j in 1..len - 1 {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0 + d - x) * out[j] - (jf * (jf + d)).sqrt() * out[j - 1])
            / ((jf + 1.0) * (jf + 1.0 + d)).sqrt();
        out.push(next);
    }
    out
}

/// `ln(n!)`.
pub fn ln_factorial(n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    if n <= 20 {
        return (2..=n).map(|k| (k as f64).ln()).sum();
    }
    libm::lgamma(n as f64 + 1.0)
}

/// `ln Gamma(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Binomial coefficient as a float.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// Largest `|z|` accepted by [`bessel_j0`]. The series is summed directly, so
/// the absolute error grows like `eps * I0(|z|)`; callers that need full
/// relative accuracy at large real `z` should stay well inside this.
pub const J0_SERIES_RADIUS: f64 = 60.0;

const J0_MAX_TERMS: usize = 200;

/// Bessel function `J0(z)` for complex `z` by its power series
/// `sum_m (-1)^m ((z/2)^2)^m / (m!)^2`.
pub fn bessel_j0(z: C64) -> Result<C64> {
    if !(z.norm() <= J0_SERIES_RADIUS) {
        return Err(Error::OutOfRange(format!("|z| = {} for J0 series", z.norm())));
    }
    let q = -(z * z) * 0.25;
    let mut term = C64::new(1.0, 0.0);
    let mut sum = term;
    for m in 1..=J0_MAX_TERMS {
        let mf = m as f64;
        term = term * q / (mf * mf);
        sum += term;
        if term.norm() < 1e-17 * sum.norm() {
            return Ok(sum);
        }
    }
    Err(Error::NoConvergence { terms: J0_MAX_TERMS })
}
