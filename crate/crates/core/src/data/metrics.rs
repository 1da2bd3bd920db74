//! Sample-quality metrics.

use crate::error::{Error, Result};
use crate::manifold::Manifold;
use rand::seq::SliceRandom;
use rayon::prelude::*;

/// Kernel bandwidth rule for [`mmd`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    /// Median pairwise geodesic distance of the pooled sample.
    Median,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmdConfig {
    pub bandwidth: Bandwidth,
}

impl Default for MmdConfig {
    fn default() -> Self {
        MmdConfig { bandwidth: Bandwidth::Median }
    }
}

/// Largest pooled sample used for the median heuristic; larger samples are
/// thinned by an even stride.
pub const MEDIAN_SUBSAMPLE: usize = 2000;

/// Median pairwise geodesic distance of `points`.
pub fn median_distance(m: &Manifold, points: &[&[f64]]) -> Result<f64> {
    let stride = points.len().div_ceil(MEDIAN_SUBSAMPLE).max(1);
    let sub: Vec<&[f64]> = points.iter().step_by(stride).copied().collect();
    let mut d = Vec::with_capacity(sub.len() * sub.len().saturating_sub(1) / 2);
    for i in 0..sub.len() {
        for j in i + 1..sub.len() {
            d.push(m.dist(sub[i], sub[j])?);
        }
    }
    if d.is_empty() {
        return Err(Error::InvalidArgument("median bandwidth needs at least two points".into()));
    }
    let mid = d.len() / 2;
    let (_, med, _) = d.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    Ok(*med)
}

fn bandwidth(m: &Manifold, a: &[Vec<f64>], b: &[Vec<f64>], cfg: &MmdConfig) -> Result<f64> {
    let h = match cfg.bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::Median => {
            let pooled: Vec<&[f64]> = a.iter().chain(b).map(|p| p.as_slice()).collect();
            median_distance(m, &pooled)?
        }
    };
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")));
    }
    Ok(h)
}

fn check_samples(m: &Manifold, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument("MMD needs at least two points per sample".into()));
    }
    for p in a.iter().chain(b) {
        if p.len() != m.ambient_dim() {
            return Err(Error::DimensionMismatch { expected: m.ambient_dim(), got: p.len() });
        }
    }
    Ok(())
}

/// Geodesic Gaussian kernel `exp(-d²/(2h²))`.
fn kernel(m: &Manifold, x: &[f64], y: &[f64], inv2h2: f64) -> Result<f64> {
    let d = m.dist(x, y)?;
    Ok((-d * d * inv2h2).exp())
}

/// Sum of `K(a_i, b_j)` over all pairs, or over `i < j` when `same`.
fn kernel_sum(m: &Manifold, a: &[Vec<f64>], b: &[Vec<f64>], inv2h2: f64, same: bool) -> Result<f64> {
    let rows: Vec<f64> = (0..a.len())
        .into_par_iter()
        .map(|i| {
            let start = if same { i + 1 } else { 0 };
            let mut s = 0.0;
            for y in &b[start..] {
                s += kernel(m, &a[i], y, inv2h2)?;
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    Ok(rows.iter().sum())
}

/// Unbiased U-statistic estimate of MMD² under the geodesic Gaussian kernel.
pub fn mmd(m: &Manifold, a: &[Vec<f64>], b: &[Vec<f64>], cfg: &MmdConfig) -> Result<f64> {
    check_samples(m, a, b)?;
    let h = bandwidth(m, a, b, cfg)?;
    let inv = 1.0 / (2.0 * h * h);
    let (n, k) = (a.len() as f64, b.len() as f64);
    let saa = 2.0 * kernel_sum(m, a, a, inv, true)?;
    let sbb = 2.0 * kernel_sum(m, b, b, inv, true)?;
    let sab = kernel_sum(m, a, b, inv, false)?;
    Ok(saa / (n * (n - 1.0)) + sbb / (k * (k - 1.0)) - 2.0 * sab / (n * k))
}

/// Biased V-statistic estimate of MMD² (zero for identical samples).
pub fn mmd_biased(m: &Manifold, a: &[Vec<f64>], b: &[Vec<f64>], cfg: &MmdConfig) -> Result<f64> {
    check_samples(m, a, b)?;
    let h = bandwidth(m, a, b, cfg)?;
    let inv = 1.0 / (2.0 * h * h);
    let (n, k) = (a.len() as f64, b.len() as f64);
    let saa = 2.0 * kernel_sum(m, a, a, inv, true)? + n;
    let sbb = 2.0 * kernel_sum(m, b, b, inv, true)? + k;
    let sab = kernel_sum(m, a, b, inv, false)?;
    Ok(saa / (n * n) + sbb / (k * k) - 2.0 * sab / (n * k))
}

/// Result of a two-sample permutation test on the MMD U-statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct PermutationTest {
    pub statistic: f64,
    /// 95% quantile of the permutation null.
    pub null_quantile: f64,
    pub p_value: f64,
    pub bandwidth: f64,
}

impl PermutationTest {
    pub fn passes(&self) -> bool {
        self.statistic < self.null_quantile
    }
}

/// Permutation test of `a` and `b` having the same law.
///
/// The kernel matrix is never stored: each row is evaluated once and
/// contracted against every label assignment, so memory is linear in the
/// sample size. With `u` the indicator of the first group,
/// `S_uu = Σ u_i u_j K_ij`, `S_u1 = Σ u_i K_ij` and `S_11 = Σ K_ij` (all
/// over `i ≠ j`) determine the statistic of every relabelling.
pub fn mmd_permutation_test(
    m: &Manifold,
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    cfg: &MmdConfig,
    permutations: usize,
    seed: u64,
) -> Result<PermutationTest> {
    check_samples(m, a, b)?;
    if permutations == 0 {
        return Err(Error::InvalidArgument("need at least one permutation".into()));
    }
    let h = bandwidth(m, a, b, cfg)?;
    let inv = 1.0 / (2.0 * h * h);
    let pooled: Vec<&[f64]> = a.iter().chain(b).map(|p| p.as_slice()).collect();
    let total = pooled.len();
    let cols = permutations + 1;
    // column 0 is the observed labelling
    let mut labels = vec![0.0f64; total * cols];
    let mut rng = crate::stream_rng(seed, 0);
    let mut idx: Vec<usize> = (0..total).collect();
    for p in 0..cols {
        if p > 0 {
            idx.shuffle(&mut rng);
        }
        for &j in &idx[..a.len()] {
            labels[j * cols + p] = 1.0;
        }
    }

    const CHUNK: usize = 64;
    // per chunk: (S_uu, S_u1, S_11) over ordered pairs with first index in the chunk's upper triangle
    let partials: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut s_uu = vec![0.0; cols];
            let mut s_u1 = vec![0.0; cols];
            let mut s_11 = 0.0;
            let mut t = vec![0.0; cols];
            for i in c * CHUNK..((c + 1) * CHUNK).min(total) {
                t.iter_mut().for_each(|v| *v = 0.0);
                let mut r = 0.0;
                for j in i + 1..total {
                    let k = kernel(m, pooled[i], pooled[j], inv)?;
                    r += k;
                    for (tp, u) in t.iter_mut().zip(&labels[j * cols..(j + 1) * cols]) {
                        *tp += k * u;
                    }
                }
                let ui = &labels[i * cols..(i + 1) * cols];
                for p in 0..cols {
                    s_uu[p] += 2.0 * ui[p] * t[p];
                    s_u1[p] += ui[p] * r + t[p];
                }
                s_11 += 2.0 * r;
            }
            Ok((s_uu, s_u1, s_11))
        })
        .collect::<Result<_>>()?;

    let mut s_uu = vec![0.0; cols];
    let mut s_u1 = vec![0.0; cols];
    let mut s_11 = 0.0;
    for (a, b, c) in partials {
        s_uu.iter_mut().zip(&a).for_each(|(x, y)| *x += y);
        s_u1.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
        s_11 += c;
    }
    let (n, k) = (a.len() as f64, b.len() as f64);
    let stat = |p: usize| {
        let saa = s_uu[p];
        let sab = s_u1[p] - saa;
        let sbb = s_11 - 2.0 * s_u1[p] + saa;
        saa / (n * (n - 1.0)) + sbb / (k * (k - 1.0)) - 2.0 * sab / (n * k)
    };
    let statistic = stat(0);
    let mut null: Vec<f64> = (1..cols).map(stat).collect();
    let exceed = null.iter().filter(|v| **v >= statistic).count();
    null.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let q = ((0.95 * permutations as f64).ceil() as usize).clamp(1, permutations) - 1;
    Ok(PermutationTest { statistic, null_quantile: null[q], p_value: (1 + exceed) as f64 / cols as f64, bandwidth: h })
}

/// One-sample Kolmogorov–Smirnov distance to a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// ZYZ Euler angles `(α, β, γ)` with `Q = R_z(α) R_y(β) R_z(γ)` and
/// `β ∈ [0, π]`. At gimbal lock (`β` within 1e-9 of 0 or π) `γ = 0`.
pub fn euler_angles(q: &[f64]) -> Result<(f64, f64, f64)> {
    Manifold::SpecialOrthogonal.check_point(q)?;
    let r = |i: usize, j: usize| q[3 * i + j];
    let beta = (r(0, 2).hypot(r(1, 2))).atan2(r(2, 2));
    if beta < 1e-9 {
        return Ok((r(1, 0).atan2(r(0, 0)), beta, 0.0));
    }
    if std::f64::consts::PI - beta < 1e-9 {
        return Ok(((-r(0, 1)).atan2(-r(0, 0)), beta, 0.0));
    }
    Ok((r(1, 2).atan2(r(0, 2)), beta, r(2, 1).atan2(-r(2, 0))))
}

/// Row-major `R_z(α) R_y(β) R_z(γ)`.
pub fn euler_to_matrix(alpha: f64, beta: f64, gamma: f64) -> Vec<f64> {
    let rz = |a: f64| nalgebra::Matrix3::new(a.cos(), -a.sin(), 0.0, a.sin(), a.cos(), 0.0, 0.0, 0.0, 1.0);
    let ry = nalgebra::Matrix3::new(beta.cos(), 0.0, beta.sin(), 0.0, 1.0, 0.0, -beta.sin(), 0.0, beta.cos());
    let m = rz(alpha) * ry * rz(gamma);
    (0..9).map(|k| m[(k / 3, k % 3)]).collect()
}
