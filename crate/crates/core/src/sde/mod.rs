//! Forward noising and reverse-time sampling by geodesic random walks.
//!
//! All processes share the form `dX = β(t) b(X) dt + √β(t) dB`, so a
//! Brownian forward marginal at time `t` is the unit-speed heat kernel at
//! `u(t) = ∫₀ᵗ β(s) ds`.

mod dump;

pub use dump::{read_samples, write_samples, SampleDump};

use crate::error::{Error, Result};
use crate::heat_kernel::{wrapped_gaussian_logpdf, wrapped_gaussian_sample};
use crate::manifold::{langevin_drift, Manifold};
use crate::nn::ScoreField;
use crate::util::{axpy, scale};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Linear noise schedule `β(t) = β_min + (β_max - β_min) t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub horizon: f64,
    pub eps: f64,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule { horizon: 1.0, eps: 1e-3, beta_min: 0.001, beta_max: 10.0 }
    }
}

impl NoiseSchedule {
    pub fn new(beta_min: f64, beta_max: f64) -> Result<Self> {
        let s = NoiseSchedule { beta_min, beta_max, ..Default::default() };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < self.horizon && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("need 0 < eps < T, got eps = {}, T = {}", self.eps, self.horizon)));
        }
        if !(self.beta_min > 0.0 && self.beta_min <= self.beta_max && self.beta_max.is_finite()) {
            return Err(Error::InvalidArgument(format!("need 0 < beta_min <= beta_max, got {} and {}", self.beta_min, self.beta_max)));
        }
        Ok(())
    }

    /// `β` on `[0, T]`, with `t` measured on the unit interval scaled by `T`.
    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + (self.beta_max - self.beta_min) * t / self.horizon
    }

    /// Diffusion coefficient `g(t) = √β(t)`.
    pub fn g(&self, t: f64) -> f64 {
        self.beta(t).sqrt()
    }

    /// Integrated rate `u(t) = ∫₀ᵗ β(s) ds`.
    pub fn u(&self, t: f64) -> f64 {
        self.beta_min * t + (self.beta_max - self.beta_min) * t * t / (2.0 * self.horizon)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProcessKind {
    /// Zero drift; the invariant law is uniform on a compact manifold.
    BrownianCompact,
    /// Langevin drift towards `mu` with scale `gamma`.
    LangevinWrapped { mu: Vec<f64>, gamma: f64 },
    /// `b(x) = -x/2` on Euclidean space.
    EuclideanOU,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisingProcess {
    pub manifold: Manifold,
    pub kind: ProcessKind,
    pub schedule: NoiseSchedule,
}

impl NoisingProcess {
    pub fn new(manifold: Manifold, kind: ProcessKind, schedule: NoiseSchedule) -> Result<Self> {
        schedule.validate()?;
        match &kind {
            ProcessKind::BrownianCompact if !manifold.is_compact() => return Err(Error::NonCompact(manifold.to_string())),
            ProcessKind::EuclideanOU if !matches!(manifold, Manifold::Euclidean(_)) => {
                return Err(Error::UnsupportedManifold(format!("Ornstein-Uhlenbeck process on {manifold}")))
            }
            ProcessKind::LangevinWrapped { mu, gamma } => {
                manifold.check_point(mu)?;
                if !(*gamma > 0.0) {
                    return Err(Error::InvalidArgument("gamma must be positive".into()));
                }
            }
            _ => {}
        }
        if matches!(manifold, Manifold::Hyperbolic(_)) && !matches!(kind, ProcessKind::LangevinWrapped { .. }) {
            return Err(Error::NonCompact(manifold.to_string()));
        }
        Ok(NoisingProcess { manifold, kind, schedule })
    }

    /// Brownian motion on a compact manifold.
    pub fn brownian(manifold: Manifold, schedule: NoiseSchedule) -> Result<Self> {
        Self::new(manifold, ProcessKind::BrownianCompact, schedule)
    }

    /// Unscaled drift `b(x)`.
    pub fn base_drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.kind {
            ProcessKind::BrownianCompact => Ok(vec![0.0; x.len()]),
            ProcessKind::EuclideanOU => Ok(scale(x, -0.5)),
            ProcessKind::LangevinWrapped { mu, gamma } => match langevin_drift(&self.manifold, x, mu, *gamma) {
                // the drift is discontinuous on the (null) cut locus
                Err(Error::CutLocus) => Ok(vec![0.0; x.len()]),
                r => r,
            },
        }
    }

    /// Forward drift `β(t) b(x)`.
    pub fn drift(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(scale(&self.base_drift(x)?, self.schedule.beta(t)))
    }

    pub fn diffusion(&self, t: f64) -> f64 {
        self.schedule.g(t)
    }

    /// Draw from the reference (approximately invariant) law.
    pub fn sample_reference<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        match &self.kind {
            ProcessKind::BrownianCompact => self.manifold.sample_uniform(rng),
            ProcessKind::EuclideanOU => Ok((0..self.manifold.ambient_dim()).map(|_| rng.sample(StandardNormal)).collect()),
            ProcessKind::LangevinWrapped { mu, gamma } => Ok(wrapped_gaussian_sample(&self.manifold, mu, *gamma, rng)),
        }
    }

    /// Log-density of the reference law with respect to the volume measure.
    pub fn reference_log_density(&self, x: &[f64]) -> Result<f64> {
        match &self.kind {
            ProcessKind::BrownianCompact => Ok(-self.manifold.log_volume()?),
            ProcessKind::EuclideanOU => {
                let d = x.len() as f64;
                Ok(-0.5 * crate::util::dot(x, x) - 0.5 * d * (2.0 * std::f64::consts::PI).ln())
            }
            ProcessKind::LangevinWrapped { mu, gamma } => wrapped_gaussian_logpdf(&self.manifold, mu, x, *gamma),
        }
    }
}

/// Standard normal tangent vector at `x`, drawn in an orthonormal basis.
pub fn gaussian_tangent<R: Rng + ?Sized>(m: &Manifold, x: &[f64], rng: &mut R) -> Vec<f64> {
    let mut z = vec![0.0; x.len()];
    for e in m.tangent_basis(x) {
        let n: f64 = rng.sample(StandardNormal);
        axpy(&mut z, n, &e);
    }
    z
}

/// Outcome of a single geodesic random-walk step.
#[derive(Clone, Debug, PartialEq)]
pub struct GrwStep {
    pub point: Vec<f64>,
    /// The step norm exceeded 0.9 times the injectivity radius.
    pub too_large: bool,
}

fn geodesic_move(m: &Manifold, x: &[f64], w: &[f64]) -> GrwStep {
    let too_large = m.norm(x, w) > 0.9 * m.injectivity_radius();
    GrwStep { point: m.exp_unchecked(x, w), too_large }
}

/// `exp_x(γ b + √γ g Z)` with `Z` standard normal on the tangent space.
pub fn grw_step<R: Rng + ?Sized>(m: &Manifold, x: &[f64], drift: &[f64], g: f64, gamma: f64, rng: &mut R) -> GrwStep {
    let z = gaussian_tangent(m, x, rng);
    grw_step_with_noise(m, x, drift, g, gamma, &z)
}

/// [`grw_step`] with the tangent noise `z` supplied by the caller.
pub fn grw_step_with_noise(m: &Manifold, x: &[f64], drift: &[f64], g: f64, gamma: f64, z: &[f64]) -> GrwStep {
    let sg = gamma.sqrt() * g;
    let w: Vec<f64> = drift.iter().zip(z).map(|(b, z)| gamma * b + sg * z).collect();
    geodesic_move(m, x, &w)
}

/// A simulated path and the number of oversized steps along it.
#[derive(Clone, Debug, PartialEq)]
pub struct GrwPath {
    pub points: Vec<Vec<f64>>,
    pub large_steps: usize,
}

impl GrwPath {
    pub fn end(&self) -> &[f64] {
        self.points.last().expect("paths hold at least the start point")
    }
}

/// Geodesic random walk over `[0, t_sim]` in `steps` steps; the drift and
/// diffusion are evaluated at `kγ`.
pub fn grw_path<R, D, G>(m: &Manifold, x0: &[f64], mut drift: D, diffusion: G, t_sim: f64, steps: usize, rng: &mut R) -> Result<GrwPath>
where
    R: Rng + ?Sized,
    D: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    G: Fn(f64) -> f64,
{
    if steps == 0 {
        return Err(Error::InvalidArgument("a random walk needs at least one step".into()));
    }
    m.check_point(x0)?;
    let gamma = t_sim / steps as f64;
    let mut points = Vec::with_capacity(steps + 1);
    points.push(x0.to_vec());
    let mut large_steps = 0;
    for k in 0..steps {
        let t = k as f64 * gamma;
        let x = &points[k];
        let b = drift(t, x)?;
        let step = grw_step(m, x, &b, diffusion(t), gamma, rng);
        large_steps += step.too_large as usize;
        debug_assert!(m.check_point(&step.point).is_ok(), "random walk left the manifold");
        points.push(step.point);
    }
    if large_steps > 0 {
        log::debug!("{large_steps} random-walk steps exceeded 0.9 x injectivity radius");
    }
    Ok(GrwPath { points, large_steps })
}

/// Forward path of a noising process from `x0` over `[0, t]`.
pub fn forward_path<R: Rng + ?Sized>(process: &NoisingProcess, x0: &[f64], t: f64, steps: usize, rng: &mut R) -> Result<GrwPath> {
    grw_path(&process.manifold, x0, |s, x| process.drift(s, x), |s| process.diffusion(s), t, steps, rng)
}

/// Endpoint of [`forward_path`].
pub fn forward_sample<R: Rng + ?Sized>(process: &NoisingProcess, x0: &[f64], t: f64, steps: usize, rng: &mut R) -> Result<Vec<f64>> {
    let path = forward_path(process, x0, t, steps, rng)?;
    Ok(path.points.into_iter().last().unwrap())
}

/// Drift of the reverse process at reverse time `t`:
/// `-b(T - t, y) + g(T - t)² s(T - t, y)`.
pub fn reverse_drift<F: ScoreField + ?Sized>(process: &NoisingProcess, t: f64, y: &[f64], score: &F) -> Result<Vec<f64>> {
    let tf = process.schedule.horizon - t;
    let mut d = scale(&process.drift(tf, y)?, -1.0);
    axpy(&mut d, process.schedule.beta(tf), &score.score(tf, y)?);
    Ok(d)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    /// Predictor steps over `[0, T - ε]`.
    pub steps: usize,
    /// Langevin corrector steps after each predictor step; 0 disables it.
    pub corrector_steps: usize,
    pub snr: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { steps: 100, corrector_steps: 0, snr: 0.15 }
    }
}

/// Langevin corrector at forward time `t`: `steps` moves with drift
/// `½ g² s` and diffusion `g`, step size `r (2/g)² (‖Z‖/‖s‖)²` capped at 0.1.
pub fn corrector_sweep<F, R>(
    process: &NoisingProcess,
    y: &[f64],
    t: f64,
    score: &F,
    steps: usize,
    snr: f64,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    F: ScoreField + ?Sized,
    R: Rng + ?Sized,
{
    let m = &process.manifold;
    let g = process.diffusion(t);
    let mut y = y.to_vec();
    for _ in 0..steps {
        let s = score.score(t, &y)?;
        // the step size uses its own draw so that it stays independent of the move
        let zn = m.norm(&y, &gaussian_tangent(m, &y, rng));
        let z = gaussian_tangent(m, &y, rng);
        let sn = m.norm(&y, &s);
        let ratio = if sn > 0.0 { zn / sn } else { f64::INFINITY };
        let gamma = (snr * (2.0 / g).powi(2) * ratio * ratio).min(0.1);
        let sg = gamma.sqrt() * g;
        let w: Vec<f64> = s.iter().zip(&z).map(|(s, z)| 0.5 * gamma * g * g * s + sg * z).collect();
        y = geodesic_move(m, &y, &w).point;
    }
    Ok(y)
}

/// Reverse-time geodesic random walk from the reference law over
/// `[0, T - ε]`, returning every visited point.
pub fn sample_reverse_path<F, R>(process: &NoisingProcess, score: &F, cfg: &SamplerConfig, rng: &mut R) -> Result<GrwPath>
where
    F: ScoreField + ?Sized,
    R: Rng + ?Sized,
{
    if cfg.steps == 0 {
        return Err(Error::InvalidArgument("a random walk needs at least one step".into()));
    }
    let m = &process.manifold;
    let horizon = process.schedule.horizon;
    let gamma = (horizon - process.schedule.eps) / cfg.steps as f64;
    let mut points = Vec::with_capacity(cfg.steps + 1);
    points.push(process.sample_reference(rng)?);
    let mut large_steps = 0;
    for k in 0..cfg.steps {
        let t = k as f64 * gamma;
        let y = &points[k];
        let b = reverse_drift(process, t, y, score)?;
        let step = grw_step(m, y, &b, process.diffusion(horizon - t), gamma, rng);
        large_steps += step.too_large as usize;
        let mut y = step.point;
        if cfg.corrector_steps > 0 {
            y = corrector_sweep(process, &y, horizon - t - gamma, score, cfg.corrector_steps, cfg.snr, rng)?;
        }
        points.push(y);
    }
    Ok(GrwPath { points, large_steps })
}

/// Endpoint of [`sample_reverse_path`].
pub fn sample_reverse<F, R>(process: &NoisingProcess, score: &F, cfg: &SamplerConfig, rng: &mut R) -> Result<Vec<f64>>
where
    F: ScoreField + ?Sized,
    R: Rng + ?Sized,
{
    Ok(sample_reverse_path(process, score, cfg, rng)?.points.pop().unwrap())
}

/// `n` independent reverse chains; chain `i` uses stream `i` of `seed`, so
/// the result does not depend on the thread count.
pub fn sample_reverse_batch<F>(process: &NoisingProcess, score: &F, cfg: &SamplerConfig, n: usize, seed: u64) -> Result<Vec<Vec<f64>>>
where
    F: ScoreField + ?Sized,
{
    (0..n).into_par_iter().map(|i| sample_reverse(process, score, cfg, &mut crate::stream_rng(seed, i as u64))).collect()
}

/// Forward endpoints from each start point; item `i` uses stream `i`.
pub fn forward_batch(process: &NoisingProcess, starts: &[Vec<f64>], t: f64, steps: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    starts.par_iter().enumerate().map(|(i, x0)| forward_sample(process, x0, t, steps, &mut crate::stream_rng(seed, i as u64))).collect()
}

/// Rejection sampler for the Brownian transition density on S² at
/// unit-speed time `u`, with uniform proposals.
pub fn heat_kernel_sample_sphere(x0: &[f64], u: f64, order: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let s2 = Manifold::Sphere(2);
    let cfg = crate::heat_kernel::HeatKernelConfig::truncated(order);
    // the density is maximal at the source
    let log_max = crate::heat_kernel::hk_log_density(&s2, x0, x0, u, &cfg)?;
    loop {
        let y = s2.sample_uniform(rng)?;
        let lp = crate::heat_kernel::hk_log_density(&s2, x0, &y, u, &cfg)?;
        if rng.gen::<f64>().ln() < lp - log_max {
            return Ok(y);
        }
    }
}
