//! Deterministic quadrature rules used by the normalisation checks.

use crate::util::TAU;
use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            dp = n as f64 * (x * p - p0) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss–Hermite rule for the standard normal: nodes and weights with
/// `Σ w f(x) ≈ E f(Z)`, from the eigen-decomposition of the Jacobi matrix.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jac = nalgebra::DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { (i.max(j) as f64).sqrt() } else { 0.0 });
    let eig = jac.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n).map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Product rule on S²: Gauss–Legendre in `z = sin(lat)` and uniform
/// longitudes. Weights sum to one, i.e. integrate against the uniform
/// probability measure.
pub fn sphere_grid(n_lat: usize, n_lon: usize) -> Vec<([f64; 3], f64)> {
    let (z, w) = gauss_legendre(n_lat);
    let mut out = Vec::with_capacity(n_lat * n_lon);
    for (zi, wi) in z.iter().zip(&w) {
        let r = (1.0 - zi * zi).sqrt();
        for j in 0..n_lon {
            let phi = TAU * (j as f64 + 0.5) / n_lon as f64;
            out.push(([r * phi.cos(), r * phi.sin(), *zi], wi / (2.0 * n_lon as f64)));
        }
    }
    out
}

/// Midpoint rule on `[0, 2π)` with weights summing to one.
pub fn circle_grid(n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|i| (TAU * (i as f64 + 0.5) / n as f64, 1.0 / n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((i - 2.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_matches_normal_moments() {
        let (x, w) = gauss_hermite(20);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        let m = |p: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum::<f64>();
        assert!(m(1).abs() < 1e-12);
        assert!((m(2) - 1.0).abs() < 1e-12);
        assert!((m(8) - 105.0).abs() < 1e-9);
        // E cos(Z) = e^{-1/2}
        let c: f64 = x.iter().zip(&w).map(|(x, w)| w * x.cos()).sum();
        assert!((c - (-0.5f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn sphere_grid_is_a_probability_rule() {
        let g = sphere_grid(16, 32);
        assert!((g.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-13);
        let z2: f64 = g.iter().map(|(p, w)| w * p[2] * p[2]).sum();
        assert!((z2 - 1.0 / 3.0).abs() < 1e-13);
    }
}
