//! Zonal sums of spherical harmonics on `S^d`.
//!
//! For the eigenspace of degree `n`,
//! `Σ_{φ ∈ Φ_n} φ(x)φ(y) = (n + α)/α · C_n^α(⟨x,y⟩)` with `α = (d-1)/2`,
//! where `C_n^α` is the Gegenbauer polynomial and the harmonics are
//! orthonormal in `L²` of the uniform probability measure.

use crate::error::{Error, Result};
use statrs::function::gamma::ln_gamma;

/// Dimension of the degree-`k` harmonic space on `S^d`:
/// `(2k + d - 1)(k + d - 2)! / (k! (d - 1)!)`.
pub fn sphere_multiplicity(k: usize, d: usize) -> usize {
    if k == 0 {
        return 1;
    }
    // binom(k + d - 2, k) computed exactly
    let mut b: u128 = 1;
    for i in 1..=k as u128 {
        b = b * (d as u128 - 2 + i) / i;
    }
    (b * (2 * k + d - 1) as u128 / (d - 1) as u128) as usize
}

/// Zonal pair sum `G_n(⟨x,y⟩)` on `S^d` from the explicit finite sum
/// `C_n^α(c) = Σ_k (-1)^k Γ(n-k+α) (2c)^{n-2k} / (Γ(α) k! (n-2k)!)`,
/// scaled to the pair-sum normalisation.
///
/// The alternating sum loses digits for large `n`; the heat kernel itself
/// uses the three-term recurrence instead.
pub fn gegenbauer_pair_sum(n: usize, inner: f64, d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("sphere dimension must be at least 2, got {d}")));
    }
    if inner.abs() > 1.0 + 1e-12 {
        return Err(Error::InvalidArgument(format!("inner product {inner} outside [-1, 1]")));
    }
    let c = inner.clamp(-1.0, 1.0);
    let alpha = (d as f64 - 1.0) / 2.0;
    let mut sum = 0.0;
    for k in 0..=n / 2 {
        let m = n - 2 * k;
        let log_coef = ln_gamma((n - k) as f64 + alpha) - ln_gamma(alpha) - ln_gamma(k as f64 + 1.0) - ln_gamma(m as f64 + 1.0);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * log_coef.exp() * (2.0 * c).powi(m as i32);
    }
    Ok((n as f64 + alpha) / alpha * sum)
}

/// `(Σ_n e^{-λ_n t/2} G_n(c), d/dc of the same)` for `n = 0..=order`,
/// via the Gegenbauer recurrence and `d/dc C_n^α = 2α C_{n-1}^{α+1}`.
pub(super) fn series(c: f64, d: usize, order: usize, t: f64) -> (f64, f64) {
    let alpha = (d as f64 - 1.0) / 2.0;
    let (mut p, mut dp) = (0.0, 0.0);
    // C_n^α and C_{n-1}^{α+1}
    let (mut a_prev, mut a_cur) = (0.0, 1.0);
    let (mut b_prev, mut b_cur) = (0.0, 0.0);
    for n in 0..=order {
        let nf = n as f64;
        if n == 1 {
            a_prev = 1.0;
            a_cur = 2.0 * alpha * c;
            b_cur = 1.0;
        } else if n >= 2 {
            let a_next = (2.0 * c * (nf + alpha - 1.0) * a_cur - (nf + 2.0 * alpha - 2.0) * a_prev) / nf;
            a_prev = a_cur;
            a_cur = a_next;
            let m = nf - 1.0;
            let beta = alpha + 1.0;
            let b_next = if n == 2 { 2.0 * beta * c } else { (2.0 * c * (m + beta - 1.0) * b_cur - (m + 2.0 * beta - 2.0) * b_prev) / m };
            b_prev = b_cur;
            b_cur = b_next;
        }
        let w = (-(nf * (nf + d as f64 - 1.0)) * t / 2.0).exp() * (nf + alpha) / alpha;
        p += w * a_cur;
        if n >= 1 {
            dp += w * 2.0 * alpha * b_cur;
        }
    }
    (p, dp)
}
