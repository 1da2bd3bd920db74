//! Brownian transition densities and their scores.
//!
//! Brownian motion is generated by `½Δ`, so the spectral series reads
//! `p_t(x | x₀) = Σ_j e^{-λ_j t / 2} φ_j(x₀) φ_j(x)` with `λ_j` the
//! eigenvalues of `-Δ`. Densities are taken with respect to the uniform
//! probability measure, so the constant eigenfunction is `φ₀ ≡ 1` and
//! `p_t → 1` as `t → ∞`.
//!
//! Small times are served by Varadhan's asymptotics,
//! `t ∇ log p_t(x | x₀) → exp_x^{-1}(x₀)`.

mod gegenbauer;
mod wrapped;

pub use gegenbauer::{gegenbauer_pair_sum, sphere_multiplicity};
pub use wrapped::{
    circle_log_kernel, circle_log_kernel_fourier, circle_log_kernel_images, wrapped_gaussian_logpdf, wrapped_gaussian_logpdf_torus,
    wrapped_gaussian_sample, wrapped_gaussian_score_torus,
};

use crate::error::{Error, Result};
use crate::manifold::Manifold;
use crate::util::{angle_diff, dot, scale};

/// Default number of spherical-harmonic degrees on spheres.
pub const DEFAULT_SPHERE_ORDER: usize = 30;
/// Default number of Fourier modes per circle factor of a torus.
pub const DEFAULT_TORUS_ORDER: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HkMethod {
    Truncated,
    Varadhan,
    /// Varadhan for `t ≤ τ`, truncated series above.
    Hybrid,
}

impl std::str::FromStr for HkMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "truncated" => Ok(HkMethod::Truncated),
            "varadhan" => Ok(HkMethod::Varadhan),
            "hybrid" => Ok(HkMethod::Hybrid),
            _ => Err(Error::InvalidArgument(format!("unknown heat-kernel method '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeatKernelConfig {
    /// Truncation order `J`; `None` picks the per-manifold default.
    pub order: Option<usize>,
    /// Switch time for [`HkMethod::Hybrid`].
    pub tau: f64,
    pub method: HkMethod,
}

impl Default for HeatKernelConfig {
    fn default() -> Self {
        HeatKernelConfig { order: None, tau: 0.25, method: HkMethod::Truncated }
    }
}

impl HeatKernelConfig {
    pub fn truncated(order: usize) -> Self {
        HeatKernelConfig { order: Some(order), ..Default::default() }
    }

    pub fn order_for(&self, m: &Manifold) -> usize {
        self.order.unwrap_or(match m {
            Manifold::Torus(_) => DEFAULT_TORUS_ORDER,
            _ => DEFAULT_SPHERE_ORDER,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == Some(0) {
            return Err(Error::InvalidArgument("truncation order must be at least 1".into()));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::InvalidArgument("tau must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Laplace–Beltrami spectrum truncated at `order`.
///
/// For tori the spectrum is that of a single circle factor; the torus
/// kernel is the product over factors.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenSpectrum {
    pub manifold: Manifold,
    pub order: usize,
    /// Eigenvalues of `-Δ`, nondecreasing, starting at 0.
    pub eigenvalues: Vec<f64>,
    pub multiplicities: Vec<usize>,
}

impl EigenSpectrum {
    pub fn new(manifold: Manifold, order: usize) -> Result<Self> {
        let (eigenvalues, multiplicities) = match manifold {
            Manifold::Sphere(d) if d >= 2 => (0..=order).map(|k| ((k * (k + d - 1)) as f64, sphere_multiplicity(k, d))).unzip(),
            Manifold::Sphere(1) | Manifold::Torus(_) => (0..=order).map(|k| ((k * k) as f64, if k == 0 { 1 } else { 2 })).unzip(),
            _ => return Err(Error::UnsupportedManifold(manifold.to_string())),
        };
        Ok(EigenSpectrum { manifold, order, eigenvalues, multiplicities })
    }

    /// `Σ_{φ ∈ Φ_n} φ(x₀) φ(x)` for the `n`-th eigenspace.
    pub fn pair_sum(&self, n: usize, x0: &[f64], x: &[f64]) -> Result<f64> {
        match self.manifold {
            Manifold::Sphere(d) if d >= 2 => gegenbauer_pair_sum(n, dot(x0, x).clamp(-1.0, 1.0), d),
            Manifold::Torus(1) => {
                let delta = angle_diff(x0[0], x[0]);
                Ok(if n == 0 { 1.0 } else { 2.0 * (n as f64 * delta).cos() })
            }
            _ => Err(Error::UnsupportedManifold(self.manifold.to_string())),
        }
    }
}

fn check_args(m: &Manifold, x0: &[f64], x: &[f64], t: f64) -> Result<()> {
    m.check_point(x0)?;
    m.check_point(x)?;
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("time must be positive, got {t}")));
    }
    Ok(())
}

/// Log of the truncated spectral series for `p_t(x | x₀)`.
///
/// A nonpositive truncated sum is clamped to `1e-300`. Sums below
/// `-1e-12`, beyond rounding error, mean too few terms for a tiny `t` and
/// are logged as a warning.
pub fn hk_log_density(m: &Manifold, x0: &[f64], x: &[f64], t: f64, cfg: &HeatKernelConfig) -> Result<f64> {
    check_args(m, x0, x, t)?;
    let order = cfg.order_for(m);
    match m {
        Manifold::Sphere(d) if *d >= 2 => {
            let c = dot(x0, x).clamp(-1.0, 1.0);
            let (p, _) = gegenbauer::series(c, *d, order, t);
            Ok(clamped_log(p))
        }
        Manifold::Sphere(1) => {
            let a0 = x0[1].atan2(x0[0]);
            let a = x[1].atan2(x[0]);
            Ok(circle_log_kernel(angle_diff(a0, a), t, order))
        }
        Manifold::Torus(_) => Ok(x0.iter().zip(x).map(|(&a, &b)| circle_log_kernel(angle_diff(a, b), t, order)).sum()),
        _ => Err(Error::UnsupportedManifold(m.to_string())),
    }
}

fn clamped_log(p: f64) -> f64 {
    if p < -1e-12 {
        log::warn!("truncated heat-kernel series is nonpositive ({p:e}); increase the truncation order");
    }
    p.max(1e-300).ln()
}

/// `∇_x log p_t(x | x₀)` from the truncated series, differentiated
/// analytically and returned as a tangent vector at `x`.
pub fn hk_score_truncated(m: &Manifold, x0: &[f64], x: &[f64], t: f64, cfg: &HeatKernelConfig) -> Result<Vec<f64>> {
    check_args(m, x0, x, t)?;
    let order = cfg.order_for(m);
    match m {
        Manifold::Sphere(d) if *d >= 2 => {
            let c = dot(x0, x).clamp(-1.0, 1.0);
            let (p, dp) = gegenbauer::series(c, *d, order, t);
            let p = clamped_log(p).exp();
            // ∇_x ⟨x₀, x⟩ = P_x x₀
            Ok(scale(&m.project(x, x0), dp / p))
        }
        Manifold::Sphere(1) => {
            let a0 = x0[1].atan2(x0[0]);
            let a = x[1].atan2(x[0]);
            let g = wrapped::circle_score(angle_diff(a0, a), t, order);
            Ok(vec![-g * a.sin(), g * a.cos()])
        }
        Manifold::Torus(_) => Ok(x0.iter().zip(x).map(|(&a, &b)| wrapped::circle_score(angle_diff(a, b), t, order)).collect()),
        _ => Err(Error::UnsupportedManifold(m.to_string())),
    }
}

/// Small-time score `exp_x^{-1}(x₀) / t`.
pub fn hk_score_varadhan(m: &Manifold, x0: &[f64], x: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("time must be positive, got {t}")));
    }
    Ok(scale(&m.log(x, x0)?, 1.0 / t))
}

/// Score of the transition density, dispatching on `cfg.method`.
///
/// The hybrid rule switches from Varadhan to the truncated series at
/// `t = τ`; the two branches do not agree exactly at the switch.
pub fn hk_score(m: &Manifold, x0: &[f64], x: &[f64], t: f64, cfg: &HeatKernelConfig) -> Result<Vec<f64>> {
    match cfg.method {
        HkMethod::Varadhan => hk_score_varadhan(m, x0, x, t),
        HkMethod::Truncated => hk_score_truncated(m, x0, x, t, cfg),
        HkMethod::Hybrid if t <= cfg.tau => hk_score_varadhan(m, x0, x, t),
        HkMethod::Hybrid => hk_score_truncated(m, x0, x, t, cfg),
    }
}
