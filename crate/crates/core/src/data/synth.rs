//! Synthetic targets with closed-form densities.

use crate::error::{Error, Result};
use crate::heat_kernel::{wrapped_gaussian_logpdf, wrapped_gaussian_logpdf_torus, wrapped_gaussian_sample, wrapped_gaussian_score_torus};
use crate::manifold::Manifold;
use crate::util::{log_sum_exp, TAU};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

/// Isotropic wrapped normal on `T^d` with a seeded uniform mean.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusTarget {
    pub mu: Vec<f64>,
    pub sigma: f64,
}

/// Target for the torus experiments: mean uniform on `T^d`, drawn from `seed`.
pub fn synth_torus_target(d: usize, sigma: f64, seed: u64) -> Result<TorusTarget> {
    if d == 0 {
        return Err(Error::InvalidArgument("torus dimension must be at least 1".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument("sigma must be positive".into()));
    }
    let mut rng = crate::stream_rng(seed, 0);
    Ok(TorusTarget { mu: (0..d).map(|_| rng.gen_range(0.0..TAU)).collect(), sigma })
}

impl TorusTarget {
    pub fn manifold(&self) -> Manifold {
        Manifold::Torus(self.mu.len())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        wrapped_gaussian_sample(&self.manifold(), &self.mu, self.sigma, rng)
    }

    /// Log-density with respect to Lebesgue measure on `[0, 2π)^d`.
    pub fn logpdf(&self, x: &[f64]) -> f64 {
        wrapped_gaussian_logpdf_torus(&self.mu, x, self.sigma)
    }

    /// Scale of the target after Brownian diffusion for unit-speed time `u`.
    pub fn diffused_sigma(&self, u: f64) -> f64 {
        (self.sigma * self.sigma + u).sqrt()
    }

    /// Log-density of the target diffused for unit-speed time `u`.
    pub fn diffused_logpdf(&self, x: &[f64], u: f64) -> f64 {
        wrapped_gaussian_logpdf_torus(&self.mu, x, self.diffused_sigma(u))
    }

    /// Score `∇ log p` and Hessian diagonal of the diffused target.
    pub fn diffused_score(&self, x: &[f64], u: f64) -> (Vec<f64>, Vec<f64>) {
        wrapped_gaussian_score_torus(&self.mu, x, self.diffused_sigma(u))
    }
}

/// Uniform mixture of wrapped normals on SO(3).
#[derive(Clone, Debug, PartialEq)]
pub struct So3Mixture {
    pub means: Vec<Vec<f64>>,
    /// Per-component variances `σ_k²`.
    pub variances: Vec<f64>,
}

/// `m` components with Haar-uniform means and `σ_k² ~ InvGamma(100, 1)`.
pub fn synth_so3_mixture(m: usize, seed: u64) -> Result<So3Mixture> {
    if m == 0 {
        return Err(Error::InvalidArgument("mixture needs at least one component".into()));
    }
    let so3 = Manifold::SpecialOrthogonal;
    let mut rng = crate::stream_rng(seed, 0);
    let gamma = Gamma::new(100.0, 1.0).expect("valid gamma parameters");
    let mut means = Vec::with_capacity(m);
    let mut variances = Vec::with_capacity(m);
    for _ in 0..m {
        means.push(so3.sample_uniform(&mut rng)?);
        variances.push(1.0 / gamma.sample(&mut rng));
    }
    Ok(So3Mixture { means, variances })
}

impl So3Mixture {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// A draw and the index of the component it came from.
    pub fn sample_with_component<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, usize) {
        let k = rng.gen_range(0..self.len());
        let q = wrapped_gaussian_sample(&Manifold::SpecialOrthogonal, &self.means[k], self.variances[k].sqrt(), rng);
        (q, k)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.sample_with_component(rng).0
    }

    /// Log-density with respect to the bi-invariant volume (total `8π²`).
    pub fn logpdf(&self, q: &[f64]) -> Result<f64> {
        let so3 = Manifold::SpecialOrthogonal;
        let terms: Vec<f64> =
            self.means.iter().zip(&self.variances).map(|(mu, v)| wrapped_gaussian_logpdf(&so3, mu, q, v.sqrt())).collect::<Result<_>>()?;
        Ok(log_sum_exp(&terms) - (self.len() as f64).ln())
    }
}
