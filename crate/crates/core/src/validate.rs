//! Self-check suites: geometry, heat kernels, random walks, losses and the
//! likelihood ODE. Each check reports a measured value against a bound.

use crate::data::{mmd, mmd_permutation_test, synth_torus_target, MmdConfig};
use crate::error::{Error, Result};
use crate::heat_kernel::{circle_log_kernel_fourier, circle_log_kernel_images, hk_log_density, hk_score_truncated, HeatKernelConfig};
use crate::likelihood::{log_likelihood, round_trip, OdeConfig};
use crate::manifold::{FrameScheme, Manifold};
use crate::nn::{FnField, NetworkSpec, ParamVector, ScoreField, ScoreNet, ZeroField};
use crate::quadrature::{gauss_hermite, sphere_grid};
use crate::sde::{forward_batch, grw_path, grw_step_with_noise, heat_kernel_sample_sphere, NoiseSchedule, NoisingProcess};
use crate::train::{batch_loss, dsm_target, LossKind, LossSpec, Sample};
use crate::util::{norm, scale, sub, wrap_angle, TAU};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Geometry,
    HeatKernel,
    Grw,
    Losses,
    Ode,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Geometry, Suite::HeatKernel, Suite::Grw, Suite::Losses, Suite::Ode];
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Geometry => "geometry",
            Suite::HeatKernel => "heatkernel",
            Suite::Grw => "grw",
            Suite::Losses => "losses",
            Suite::Ode => "ode",
        })
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|v| v.to_string() == s.trim().to_ascii_lowercase().replace(['-', '_'], ""))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite '{s}'")))
    }
}

/// One measured quantity and the bound it must not exceed.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub value: f64,
    pub bound: f64,
}

impl Check {
    fn new(suite: Suite, name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check { suite, name: name.into(), value, bound }
    }

    pub fn passed(&self) -> bool {
        self.value <= self.bound
    }

    /// `check suite=.. name=.. status=pass|fail value=.. bound=..`
    pub fn line(&self) -> String {
        format!(
            "check suite={} name={} status={} value={:.6e} bound={:.6e}",
            self.suite,
            self.name,
            if self.passed() { "pass" } else { "fail" },
            self.value,
            self.bound
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
    /// Free-form tables printed alongside the checks.
    pub tables: Vec<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tables {
            out.push_str(t);
        }
        for c in &self.checks {
            out.push_str(&c.line());
            out.push('\n');
        }
        out
    }
}

/// Replacement exponential map, used to check that the geometry suite
/// notices a broken implementation.
pub type ExpHook = fn(&Manifold, &[f64], &[f64]) -> Vec<f64>;

/// An exponential map that overshoots by 0.1%.
pub fn corrupted_exp(m: &Manifold, x: &[f64], v: &[f64]) -> Vec<f64> {
    m.exp_unchecked(x, &scale(v, 1.001))
}

#[derive(Clone, Copy, Debug)]
pub struct ValidateOptions {
    pub seed: u64,
    /// Random cases per geometry check.
    pub samples: usize,
    /// Sample size of each MMD estimate in the random-walk suite.
    pub mmd_samples: usize,
    pub exp_hook: Option<ExpHook>,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions { seed: 0, samples: 1000, mmd_samples: 10_000, exp_hook: None }
    }
}

pub fn run_suite(suite: Suite, opts: &ValidateOptions) -> Result<SuiteReport> {
    if opts.samples < 1 || opts.mmd_samples < 2 {
        return Err(Error::InvalidArgument("validation needs at least one case and two MMD samples".into()));
    }
    match suite {
        Suite::Geometry => geometry_suite(opts),
        Suite::HeatKernel => heat_kernel_suite(),
        Suite::Grw => grw_suite(opts),
        Suite::Losses => losses_suite(opts),
        Suite::Ode => ode_suite(opts),
    }
}

/// The five manifolds exercised by the geometry suite.
pub const GEOMETRY_MANIFOLDS: [Manifold; 5] =
    [Manifold::Sphere(2), Manifold::Torus(2), Manifold::SpecialOrthogonal, Manifold::Hyperbolic(2), Manifold::Euclidean(3)];

fn random_tangent<R: Rng + ?Sized>(m: &Manifold, x: &[f64], max_norm: f64, rng: &mut R) -> Vec<f64> {
    let z = crate::sde::gaussian_tangent(m, x, rng);
    let n = m.norm(x, &z);
    if n == 0.0 {
        return z;
    }
    scale(&z, max_norm * rng.gen::<f64>() / n)
}

/// A random point; non-compact spaces use a ball of radius 2 about the origin.
fn random_point<R: Rng + ?Sized>(m: &Manifold, rng: &mut R) -> Vec<f64> {
    if m.is_compact() {
        m.sample_uniform(rng).expect("compact")
    } else {
        let o = m.origin();
        m.exp_unchecked(&o, &random_tangent(m, &o, 2.0, rng))
    }
}

fn max_of(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, |a, b| if b.is_nan() { f64::NAN } else { a.max(b) })
}

fn geometry_suite(opts: &ValidateOptions) -> Result<SuiteReport> {
    let s = Suite::Geometry;
    let mut checks = Vec::new();
    for m in GEOMETRY_MANIFOLDS {
        let mut rng = crate::stream_rng(opts.seed, 0);
        let exp = |x: &[f64], v: &[f64]| match opts.exp_hook {
            Some(h) => h(&m, x, v),
            None => m.exp_unchecked(x, v),
        };
        let radius = if m.is_compact() { 0.9 * m.injectivity_radius() } else { 2.0 };
        let (mut inv, mut inv_pt, mut iso, mut angle, mut dist, mut proj, mut rank) = (0f64, 0f64, 0f64, 0f64, 0f64, 0f64, f64::INFINITY);
        for _ in 0..opts.samples {
            let x = random_point(&m, &mut rng);
            let v = random_tangent(&m, &x, radius, &mut rng);
            let y = exp(&x, &v);
            inv = inv.max(match m.log(&x, &y) {
                Ok(l) => m.norm(&x, &sub(&l, &v)),
                Err(_) => f64::INFINITY,
            });
            let z = random_point(&m, &mut rng);
            if let Ok(l) = m.log(&x, &z) {
                inv_pt = inv_pt.max(norm(&sub(&exp(&x, &l), &z)));
                dist = dist.max((m.dist(&x, &z)? - m.norm(&x, &l)).abs());
                let (a, b) = (random_tangent(&m, &x, 1.0, &mut rng), random_tangent(&m, &x, 1.0, &mut rng));
                let (pa, pb) = (m.transport(&x, &z, &a)?, m.transport(&x, &z, &b)?);
                iso = iso.max((m.norm(&z, &pa) - m.norm(&x, &a)).abs());
                angle = angle.max((m.inner(&z, &pa, &pb) - m.inner(&x, &a, &b)).abs());
            }
            let w: Vec<f64> = (0..m.ambient_dim()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let p1 = m.project(&x, &w);
            proj = proj.max(norm(&sub(&m.project(&x, &p1), &p1)));
            let sv = m.frame(&x, FrameScheme::Projected)?.singular_values();
            rank = rank.min(sv[m.dim() - 1]);
        }
        checks.push(Check::new(s, format!("exp_log_inversion/{m}"), inv, 1e-8));
        checks.push(Check::new(s, format!("log_exp_inversion/{m}"), inv_pt, 1e-9));
        checks.push(Check::new(s, format!("transport_isometry/{m}"), iso, 1e-9));
        checks.push(Check::new(s, format!("transport_inner_products/{m}"), angle, 1e-9));
        checks.push(Check::new(s, format!("dist_consistency/{m}"), dist, 1e-9));
        checks.push(Check::new(s, format!("projection_idempotence/{m}"), proj, 1e-12));
        // the frame spans the tangent space: the d-th singular value is positive
        checks.push(Check::new(s, format!("frame_rank/{m}"), -rank, -1e-8));
    }
    checks.push(Check::new(s, "lie_frame_divergence/SO3", lie_frame_divergence(opts)?, 1e-5));
    Ok(SuiteReport { suite: s, checks, tables: vec![] })
}

/// Largest central-difference divergence of the SO(3) Lie frame fields.
fn lie_frame_divergence(opts: &ValidateOptions) -> Result<f64> {
    let m = Manifold::SpecialOrthogonal;
    let mut rng = crate::stream_rng(opts.seed, 1);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let q = m.sample_uniform(&mut rng)?;
        let basis = m.tangent_basis(&q);
        for i in 0..3 {
            let mut div = 0.0;
            for e in &basis {
                let fp = m.frame(&m.exp_unchecked(&q, &scale(e, h)), FrameScheme::LieFrame)?.field(i);
                let fm = m.frame(&m.exp_unchecked(&q, &scale(e, -h)), FrameScheme::LieFrame)?.field(i);
                let d: Vec<f64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
                div += m.inner(&q, e, &d);
            }
            worst = worst.max(div.abs());
        }
    }
    Ok(worst)
}

/// `|∫ p_t(x₀, ·) - 1|` on S² with `order` harmonics on a 64×128 grid.
pub fn sphere_normalization_error(x0: &[f64], t: f64, order: usize) -> Result<f64> {
    let s2 = Manifold::Sphere(2);
    let cfg = HeatKernelConfig::truncated(order);
    let mut total = 0.0;
    for (x, w) in sphere_grid(64, 128) {
        total += w * hk_log_density(&s2, x0, &x, t, &cfg)?.exp();
    }
    Ok((total - 1.0).abs())
}

/// Largest difference between the Fourier and image-sum circle kernels.
pub fn circle_poisson_error() -> f64 {
    let mut worst: f64 = 0.0;
    for t in [0.05, 0.1, 0.5, 1.0, 2.0] {
        for k in 0..64 {
            let d = -PI + TAU * k as f64 / 64.0;
            let f = circle_log_kernel_fourier(d, t, 200).exp();
            let i = circle_log_kernel_images(d, t, 50).exp();
            worst = worst.max((f - i).abs());
        }
    }
    worst
}

/// Relative error of `t·∇log p_t` against `exp_x^{-1}(x₀)` on S² at
/// geodesic distance `r`, for each `t`.
pub fn varadhan_errors(r: f64, times: &[f64], order: usize) -> Result<Vec<f64>> {
    let s2 = Manifold::Sphere(2);
    let x0 = [0.0, 0.0, 1.0];
    let x = s2.exp(&x0, &[r, 0.0, 0.0])?;
    let log = s2.log(&x, &x0)?;
    let cfg = HeatKernelConfig::truncated(order);
    times
        .iter()
        .map(|&t| {
            let st = scale(&hk_score_truncated(&s2, &x0, &x, t, &cfg)?, t);
            Ok(norm(&sub(&st, &log)) / norm(&log))
        })
        .collect()
}

fn heat_kernel_suite() -> Result<SuiteReport> {
    let s = Suite::HeatKernel;
    let mut checks = Vec::new();
    let x0 = [0.48, 0.6, 0.64];
    for t in [0.1, 0.5, 1.0] {
        checks.push(Check::new(s, format!("s2_normalization/t={t}"), sphere_normalization_error(&x0, t, 30)?, 1e-3));
    }
    // T¹ normalisation by the midpoint rule
    let t1 = Manifold::Torus(1);
    for t in [0.1, 0.5, 1.0] {
        let n = 10_000;
        let cfg = HeatKernelConfig::default();
        let mut total = 0.0;
        for k in 0..n {
            total += hk_log_density(&t1, &[0.3], &[TAU * (k as f64 + 0.5) / n as f64], t, &cfg)?.exp() / n as f64;
        }
        checks.push(Check::new(s, format!("t1_normalization/t={t}"), (total - 1.0).abs(), 1e-3));
    }
    checks.push(Check::new(s, "t1_fourier_vs_images", circle_poisson_error(), 1e-10));
    let times = [0.2, 0.1, 0.05, 0.02];
    let errs = varadhan_errors(0.3, &times, 60)?;
    let increases = errs.windows(2).filter(|w| w[1] >= w[0]).count();
    checks.push(Check::new(s, "varadhan_monotone_violations", increases as f64, 0.0));
    checks.push(Check::new(s, "varadhan_relative_error/t=0.02", errs[3], 0.05));
    let table = std::iter::once("# t varadhan_relative_error\n".to_string())
        .chain(times.iter().zip(&errs).map(|(t, e)| format!("{t} {e:.6e}\n")))
        .collect();
    Ok(SuiteReport { suite: s, checks, tables: vec![table] })
}

/// MMD² between `n` endpoints of an `N`-step walk and `n` heat-kernel
/// samples on S² at unit-speed time `u`, for each `N`.
pub fn grw_mmd_table(steps: &[usize], u: f64, n: usize, seed: u64) -> Result<Vec<(usize, f64)>> {
    let s2 = Manifold::Sphere(2);
    let x0 = vec![0.0, 0.0, 1.0];
    let exact = heat_kernel_samples(&x0, u, n, seed)?;
    steps
        .iter()
        .map(|&k| {
            let walk = grw_samples(&x0, u, k, n, seed.wrapping_add(1 + k as u64))?;
            Ok((k, mmd(&s2, &walk, &exact, &MmdConfig::default())?))
        })
        .collect()
}

/// Exact samples of the S² transition density.
pub fn heat_kernel_samples(x0: &[f64], u: f64, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    (0..n).into_par_iter().map(|i| heat_kernel_sample_sphere(x0, u, 40, &mut crate::stream_rng(seed, i as u64))).collect()
}

/// Endpoints of unit-diffusion random walks on S² over time `u`.
pub fn grw_samples(x0: &[f64], u: f64, steps: usize, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let s2 = Manifold::Sphere(2);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let path = grw_path(&s2, x0, |_, x| Ok(vec![0.0; x.len()]), |_| 1.0, u, steps, &mut crate::stream_rng(seed, i as u64))?;
            Ok(path.end().to_vec())
        })
        .collect()
}

/// Weak error `|E z(X_N) - e^{-u} z(x₀)|` of the `N`-step walk on S² at
/// unit-speed time `u`, for the first zonal harmonic `z`.
///
/// One step maps `E[z | x]` to `c(γ) z(x)` exactly, by rotational symmetry
/// about the z-axis and reflection of the tangent noise. `c(γ)` is computed
/// by tensor Gauss–Hermite quadrature over the tangent noise of the actual
/// step map, and linearity is confirmed at a second base point.
pub fn weak_error_table(steps: &[usize], u: f64) -> Result<Vec<(usize, f64)>> {
    let s2 = Manifold::Sphere(2);
    let (nodes, weights) = gauss_hermite(40);
    let one_step = |x: &[f64], gamma: f64| {
        let basis = s2.tangent_basis(x);
        let mut acc = 0.0;
        for (a, wa) in nodes.iter().zip(&weights) {
            for (b, wb) in nodes.iter().zip(&weights) {
                let z: Vec<f64> = basis[0].iter().zip(&basis[1]).map(|(e, f)| a * e + b * f).collect();
                acc += wa * wb * grw_step_with_noise(&s2, x, &[0.0; 3], 1.0, gamma, &z).point[2];
            }
        }
        acc
    };
    let (pole, tilted) = ([0.0, 0.0, 1.0], [0.0, 0.8, 0.6]);
    steps
        .iter()
        .map(|&k| {
            let gamma = u / k as f64;
            let c = one_step(&pole, gamma);
            let c2 = one_step(&tilted, gamma) / tilted[2];
            if (c - c2).abs() > 1e-12 {
                return Err(Error::NonFinite(format!("step map is not linear in z: {c} vs {c2}")));
            }
            Ok((k, (c.powi(k as i32) - (-u).exp()).abs()))
        })
        .collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|(x, y)| (x.ln(), y.ln())).unzip();
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn grw_suite(opts: &ValidateOptions) -> Result<SuiteReport> {
    let s = Suite::Grw;
    let n = opts.mmd_samples;
    let mut checks = Vec::new();
    let mut tables = Vec::new();

    let ns = [1, 2, 5, 10, 20, 50];
    let table = grw_mmd_table(&ns, 0.5, n, opts.seed)?;
    tables.push(
        std::iter::once(format!("# N mmd2 (n = {n}, t = 0.5)\n")).chain(table.iter().map(|(k, v)| format!("{k} {v:.6e}\n"))).collect(),
    );
    let at = |k: usize| table.iter().find(|(s, _)| *s == k).map(|(_, v)| *v).unwrap();
    // N = 10 must beat N = 1
    checks.push(Check::new(s, "mmd_n10_below_n1", at(10) - at(1), 0.0));

    let x0 = [0.0, 0.0, 1.0];
    let walk = grw_samples(&x0, 0.5, 5, n, opts.seed.wrapping_add(100))?;
    let exact = heat_kernel_samples(&x0, 0.5, n, opts.seed.wrapping_add(101))?;
    let pt = mmd_permutation_test(&Manifold::Sphere(2), &walk, &exact, &MmdConfig::default(), 100, opts.seed)?;
    checks.push(Check::new(s, "mmd_n5_vs_null_quantile", pt.statistic - pt.null_quantile, 0.0));

    let ks = [10, 20, 40, 80];
    let weak = weak_error_table(&ks, 1.0)?;
    let slope = -log_log_slope(&weak.iter().map(|(k, e)| (*k as f64, *e)).collect::<Vec<_>>());
    tables.push(std::iter::once("# N weak_error\n".to_string()).chain(weak.iter().map(|(k, e)| format!("{k} {e:.6e}\n"))).collect());
    checks.push(Check::new(s, "weak_order_slope_distance_to_1", (slope - 1.0).abs(), 0.3));

    // mixing: forward Brownian motion at the default horizon is near uniform
    let s2 = Manifold::Sphere(2);
    let p = NoisingProcess::brownian(s2, NoiseSchedule::default())?;
    let ends = forward_batch(&p, &vec![x0.to_vec(); n], p.schedule.horizon, 100, opts.seed.wrapping_add(200))?;
    let mut rng = crate::stream_rng(opts.seed, 300);
    let unif: Vec<Vec<f64>> = (0..n).map(|_| s2.sample_uniform(&mut rng)).collect::<Result<_>>()?;
    let pt = mmd_permutation_test(&s2, &ends, &unif, &MmdConfig::default(), 100, opts.seed.wrapping_add(1))?;
    checks.push(Check::new(s, "mixing_vs_null_quantile", pt.statistic - pt.null_quantile, 0.0));
    Ok(SuiteReport { suite: s, checks, tables })
}

/// Mean and standard error of
/// `‖s - ∇log p_{t|0}‖² - 2(½‖s‖² + div s) - ‖∇log p_{t|0}‖²` on T¹ for a
/// random network, with `x_t` drawn exactly from the wrapped transition.
pub fn dsm_ism_gap(t: f64, n: usize, seed: u64) -> Result<(f64, f64)> {
    let t1 = Manifold::Torus(1);
    let p = NoisingProcess::brownian(t1, NoiseSchedule::default())?;
    let spec = NetworkSpec::new(t1, FrameScheme::Coordinates)?.with_hidden(2, 16)?;
    let net = ScoreNet::new(spec, ParamVector::random(&spec, 1.0, &mut crate::stream_rng(seed, 0)))?;
    let target = synth_torus_target(1, 0.2, seed)?;
    let loss = LossSpec::new(LossKind::DsmExact);
    let u = p.schedule.u(t);
    let diffs: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = crate::stream_rng(seed, 1 + i as u64);
            let x0 = target.sample(&mut rng);
            let z: f64 = rng.sample(StandardNormal);
            let xt = vec![wrap_angle(x0[0] + u.sqrt() * z)];
            let sample = Sample::new(x0, t, xt);
            let g = dsm_target(&loss, &p, &sample)?.ok_or(Error::CutLocus)?[0];
            let v = net.score(t, &sample.xt)?[0];
            let div = net.divergence_exact(t, &sample.xt)?;
            Ok((v - g).powi(2) - 2.0 * (0.5 * v * v + div) - g * g)
        })
        .collect::<Result<_>>()?;
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok((mean, (var / nf).sqrt()))
}

/// Largest relative error between the tape gradient of a loss and central
/// differences, over every parameter of a width-8 network on S².
pub fn gradient_check(kind: LossKind, seed: u64) -> Result<f64> {
    let s2 = Manifold::Sphere(2);
    let p = NoisingProcess::brownian(s2, NoiseSchedule::default())?;
    let spec = NetworkSpec::new(s2, FrameScheme::Projected)?.with_hidden(2, 8)?;
    let mut rng = crate::stream_rng(seed, 0);
    let params = ParamVector::random(&spec, 1.0, &mut rng);
    let loss = LossSpec::new(kind);
    let batch: Vec<Sample> = (0..4)
        .map(|_| {
            let x0 = s2.sample_uniform(&mut rng)?;
            let t = rng.gen_range(0.05..1.0);
            let xt = s2.exp(&x0, &random_tangent(&s2, &x0, 1.0, &mut rng))?;
            Ok(Sample::new(x0, t, xt))
        })
        .collect::<Result<_>>()?;
    let g = batch_loss(&params, &spec, &loss, &p, &batch)?.grad;
    let h = 1e-5;
    let mut q = params.clone();
    let mut fd = Vec::with_capacity(q.len());
    for i in 0..q.len() {
        let w = q.data[i];
        q.data[i] = w + h;
        let a = batch_loss(&q, &spec, &loss, &p, &batch)?.value;
        q.data[i] = w - h;
        let b = batch_loss(&q, &spec, &loss, &p, &batch)?.value;
        q.data[i] = w;
        fd.push((a - b) / (2.0 * h));
    }
    // entries far below the gradient scale are compared in absolute terms
    let floor = 1e-3 * norm(&fd).max(1e-8);
    Ok(max_of(g.iter().zip(&fd).map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))))
}

fn losses_suite(opts: &ValidateOptions) -> Result<SuiteReport> {
    let s = Suite::Losses;
    let mut checks = Vec::new();
    for t in [0.1, 0.5] {
        let (mean, se) = dsm_ism_gap(t, 100_000, opts.seed)?;
        checks.push(Check::new(s, format!("dsm_ism_identity_z/t={t}"), (mean / se).abs(), 3.0));
    }
    for kind in [LossKind::DsmTruncated, LossKind::IsmExact] {
        let worst = max_of((0..10).map(|k| gradient_check(kind, opts.seed.wrapping_add(k)).unwrap_or(f64::NAN)));
        checks.push(Check::new(s, format!("gradient_vs_finite_differences/{kind:?}"), worst, 1e-4));
    }
    Ok(SuiteReport { suite: s, checks, tables: vec![] })
}

/// Largest `|log p_ε(x) - log p_target,ε(x)|` on T¹ at `n` points when the
/// exact score of a diffused wrapped Gaussian drives the flow.
pub fn circle_likelihood_error(n: usize, seed: u64) -> Result<f64> {
    let t1 = Manifold::Torus(1);
    let target = synth_torus_target(1, 0.2, seed)?;
    // a long schedule so that the endpoint law is uniform to high accuracy
    let sch = NoiseSchedule::new(0.001, 30.0)?;
    let p = NoisingProcess::brownian(t1, sch)?;
    let (ts, tj) = (target.clone(), target.clone());
    let score = FnField::new(t1, move |t, x| Ok(ts.diffused_score(x, sch.u(t)).0))
        .with_jvp(move |t, x, v| Ok(vec![tj.diffused_score(x, sch.u(t)).1[0] * v[0]]));
    let mut rng = crate::stream_rng(seed, 1);
    let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(0.0..TAU)]).collect();
    let errs: Vec<f64> = pts
        .par_iter()
        .map(|x| {
            let got = log_likelihood(&p, &score, x, &OdeConfig::default())?.log_likelihood;
            Ok((got - target.diffused_logpdf(x, sch.u(sch.eps))).abs())
        })
        .collect::<Result<_>>()?;
    Ok(max_of(errs.into_iter()))
}

/// `|NLL - log|M||` of the uniform model at a few random points.
pub fn uniform_nll_error(m: Manifold, seed: u64) -> Result<f64> {
    let p = NoisingProcess::brownian(m, NoiseSchedule::default())?;
    let mut rng = crate::stream_rng(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let x = m.sample_uniform(&mut rng)?;
        let lp = log_likelihood(&p, &ZeroField(m), &x, &OdeConfig::default())?.log_likelihood;
        worst = worst.max((-lp - m.log_volume()?).abs());
    }
    Ok(worst)
}

fn ode_suite(opts: &ValidateOptions) -> Result<SuiteReport> {
    let s = Suite::Ode;
    let mut checks = Vec::new();
    checks.push(Check::new(s, "circle_exact_score_nll", circle_likelihood_error(100, opts.seed)?, 1e-2));
    for m in [Manifold::Sphere(2), Manifold::Torus(2)] {
        checks.push(Check::new(s, format!("uniform_nll/{m}"), uniform_nll_error(m, opts.seed)?, 1e-3));
    }
    let s2 = Manifold::Sphere(2);
    let p = NoisingProcess::brownian(s2, NoiseSchedule::default())?;
    let spec = NetworkSpec::new(s2, FrameScheme::Projected)?.with_hidden(2, 16)?;
    let mut rng = crate::stream_rng(opts.seed, 2);
    let net = ScoreNet::new(spec, ParamVector::random(&spec, 0.5, &mut rng))?;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let x = s2.sample_uniform(&mut rng)?;
        let back = round_trip(&p, &net, &x, &OdeConfig::with_tol(1e-8))?;
        worst = worst.max(s2.dist(&x, &back)?);
    }
    checks.push(Check::new(s, "flow_round_trip/S2", worst, 1e-5));
    Ok(SuiteReport { suite: s, checks, tables: vec![] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.to_string().parse::<Suite>().unwrap(), s);
        }
        assert_eq!("heat-kernel".parse::<Suite>().unwrap(), Suite::HeatKernel);
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn check_lines() {
        let c = Check::new(Suite::Ode, "x", 0.5, 1.0);
        assert!(c.passed());
        assert_eq!(c.line(), "check suite=ode name=x status=pass value=5.000000e-1 bound=1.000000e0");
        assert!(!Check::new(Suite::Ode, "x", f64::NAN, 1.0).passed());
    }

    #[test]
    fn geometry_passes_and_catches_a_broken_exp() {
        let opts = ValidateOptions { samples: 200, ..Default::default() };
        let good = run_suite(Suite::Geometry, &opts).unwrap();
        assert!(good.passed(), "{}", good.to_text());
        let bad = run_suite(Suite::Geometry, &ValidateOptions { exp_hook: Some(corrupted_exp), ..opts }).unwrap();
        let failed: Vec<&str> = bad.failures().map(|c| c.name.as_str()).collect();
        assert!(failed.contains(&"exp_log_inversion/Sphere(2)"), "{failed:?}");
        assert!(failed.iter().all(|n| n.contains("inversion")), "{failed:?}");
    }

    #[test]
    fn heat_kernel_suite_passes() {
        let r = run_suite(Suite::HeatKernel, &ValidateOptions::default()).unwrap();
        assert!(r.passed(), "{}", r.to_text());
    }

    #[test]
    fn weak_error_has_order_one() {
        let weak = weak_error_table(&[10, 20, 40, 80], 1.0).unwrap();
        let slope = -log_log_slope(&weak.iter().map(|(k, e)| (*k as f64, *e)).collect::<Vec<_>>());
        assert!((slope - 1.0).abs() < 0.3, "{weak:?}");
        // leading term of c(γ) - e^{-γ} is -γ²/6 per step
        let (k, e) = weak[3];
        let predicted = 1.0 / (6.0 * k as f64) * (-1f64).exp();
        assert!((e / predicted - 1.0).abs() < 0.1, "{e} vs {predicted}");
    }

    #[test]
    fn slope_of_a_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|&x: &f64| (x, 3.0 * x.powf(-1.5))).collect();
        assert!((log_log_slope(&pts) + 1.5).abs() < 1e-12);
    }

    #[test]
    fn gradients_agree() {
        for kind in [LossKind::DsmTruncated, LossKind::IsmExact] {
            assert!(gradient_check(kind, 3).unwrap() < 1e-4);
        }
    }

    #[test]
    fn uniform_nll() {
        assert!(uniform_nll_error(Manifold::Sphere(2), 0).unwrap() < 1e-3);
    }
}
