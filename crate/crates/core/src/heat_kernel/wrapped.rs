//! Circle kernels and wrapped Gaussians.

use crate::error::Result;
use crate::manifold::Manifold;
use crate::util::{angle_diff, log_sum_exp, TAU};
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

/// Winding images kept on each side for circle sums.
pub const CIRCLE_IMAGES: i32 = 10;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log heat kernel on the unit circle by the image (wrapped Gaussian) sum,
/// w.r.t. the uniform probability measure.
pub fn circle_log_kernel_images(delta: f64, t: f64, images: i32) -> f64 {
    let terms: Vec<f64> = (-images..=images)
        .map(|m| {
            let y = delta + TAU * m as f64;
            -y * y / (2.0 * t)
        })
        .collect();
    0.5 * (TAU / t).ln() + log_sum_exp(&terms)
}

/// Log heat kernel on the unit circle by the Fourier series
/// `1 + 2 Σ_{k ≤ order} e^{-k²t/2} cos(kδ)`.
pub fn circle_log_kernel_fourier(delta: f64, t: f64, order: usize) -> f64 {
    let s: f64 = (1..=order).map(|k| (-((k * k) as f64) * t / 2.0).exp() * (k as f64 * delta).cos()).sum();
    (1.0 + 2.0 * s).max(1e-300).ln()
}

/// Circle kernel using whichever form converges fastest: images for
/// `t < 1`, Fourier modes otherwise.
pub fn circle_log_kernel(delta: f64, t: f64, order: usize) -> f64 {
    if t < 1.0 {
        circle_log_kernel_images(delta, t, CIRCLE_IMAGES)
    } else {
        circle_log_kernel_fourier(delta, t, order)
    }
}

/// `d/dx log p_t(x | x₀)` on the circle with `δ = x - x₀`.
pub(super) fn circle_score(delta: f64, t: f64, order: usize) -> f64 {
    if t < 1.0 {
        let ys: Vec<f64> = (-CIRCLE_IMAGES..=CIRCLE_IMAGES).map(|m| delta + TAU * m as f64).collect();
        let logs: Vec<f64> = ys.iter().map(|y| -y * y / (2.0 * t)).collect();
        let lse = log_sum_exp(&logs);
        ys.iter().zip(&logs).map(|(y, l)| (l - lse).exp() * (-y / t)).sum()
    } else {
        let (mut p, mut dp) = (1.0, 0.0);
        for k in 1..=order {
            let kf = k as f64;
            let w = (-kf * kf * t / 2.0).exp();
            p += 2.0 * w * (kf * delta).cos();
            dp -= 2.0 * kf * w * (kf * delta).sin();
        }
        dp / p.max(1e-300)
    }
}

/// Pushforward of `N(0, σ² I)` in an orthonormal tangent basis at `mu`
/// through `exp_mu`.
pub fn wrapped_gaussian_sample<R: Rng + ?Sized>(m: &Manifold, mu: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    let basis = m.tangent_basis(mu);
    let mut v = vec![0.0; mu.len()];
    for b in &basis {
        let z: f64 = rng.sample(StandardNormal);
        crate::util::axpy(&mut v, sigma * z, b);
    }
    m.exp_unchecked(mu, &v)
}

/// Wrapped Gaussian log-density on `T^d` w.r.t. Lebesgue measure on
/// `[0, 2π)^d`, with `|k| ≤ 10` winding images per angle.
pub fn wrapped_gaussian_logpdf_torus(mu: &[f64], x: &[f64], sigma: f64) -> f64 {
    wrapped_torus_images(mu, x, sigma, CIRCLE_IMAGES)
}

/// Per-angle score `∂_θ log p` and curvature `∂²_θ log p` of the
/// isotropic wrapped normal on `T^d`.
pub fn wrapped_gaussian_score_torus(mu: &[f64], x: &[f64], sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let s2 = sigma * sigma;
    mu.iter()
        .zip(x)
        .map(|(&a, &b)| {
            let d = angle_diff(a, b);
            let ys: Vec<f64> = (-CIRCLE_IMAGES..=CIRCLE_IMAGES).map(|k| d + TAU * k as f64).collect();
            let logits: Vec<f64> = ys.iter().map(|y| -y * y / (2.0 * s2)).collect();
            let lse = log_sum_exp(&logits);
            let (mut m1, mut m2) = (0.0, 0.0);
            for (y, l) in ys.iter().zip(&logits) {
                let w = (l - lse).exp();
                m1 += w * y;
                m2 += w * y * y;
            }
            (-m1 / s2, -1.0 / s2 + (m2 - m1 * m1) / (s2 * s2))
        })
        .unzip()
}

pub(crate) fn wrapped_torus_images(mu: &[f64], x: &[f64], sigma: f64, images: i32) -> f64 {
    let s2 = sigma * sigma;
    mu.iter()
        .zip(x)
        .map(|(&a, &b)| {
            let d = angle_diff(a, b);
            let terms: Vec<f64> = (-images..=images).map(|k| -(d + TAU * k as f64).powi(2) / (2.0 * s2)).collect();
            log_sum_exp(&terms) - 0.5 * (LN_2PI + s2.ln())
        })
        .sum()
}

/// Wrapped Gaussian log-density w.r.t. the Riemannian volume measure,
/// summing over all preimages of `x` under `exp_mu` (winding images are
/// truncated at three turns on spheres and SO(3)).
pub fn wrapped_gaussian_logpdf(m: &Manifold, mu: &[f64], x: &[f64], sigma: f64) -> Result<f64> {
    let d = m.dim() as f64;
    let s2 = sigma * sigma;
    let gauss = |r: f64| -0.5 * d * (LN_2PI + s2.ln()) - r * r / (2.0 * s2);
    match m {
        Manifold::Euclidean(_) => Ok(gauss(crate::util::norm(&crate::util::sub(x, mu)))),
        Manifold::Torus(_) => Ok(wrapped_torus_images(mu, x, sigma, CIRCLE_IMAGES)),
        Manifold::Hyperbolic(_) => {
            // volume density of exp at radius r is (sinh r / r)^{d-1}
            let r = m.dist(mu, x)?;
            Ok(gauss(r) - (d - 1.0) * crate::util::sinhc(r).ln())
        }
        Manifold::Sphere(_) => {
            // preimages lie on the line through log_mu(x) at signed radii r + 2πk
            let r = m.dist(mu, x)?;
            if r < 1e-8 || PI - r < 1e-8 {
                return Ok(gauss(r));
            }
            let terms: Vec<f64> = (-3..=3)
                .map(|k| {
                    let s = r + TAU * k as f64;
                    gauss(s) - (d - 1.0) * (r.sin() / s).abs().ln()
                })
                .collect();
            Ok(log_sum_exp(&terms))
        }
        Manifold::SpecialOrthogonal => {
            // volume density of exp at angle θ is 2(1 - cos θ)/θ²
            let theta = m.dist(mu, x)?;
            if theta < 1e-6 {
                return Ok(gauss(theta) - (2.0 * crate::util::one_minus_cos_over_sq(theta)).ln());
            }
            let jac = (4.0 * (theta / 2.0).sin().powi(2)).ln();
            let terms: Vec<f64> = (-3..=3)
                .map(|k| {
                    let s = theta + TAU * k as f64;
                    gauss(s) + 2.0 * s.abs().ln() - jac
                })
                .collect();
            Ok(log_sum_exp(&terms))
        }
    }
}
