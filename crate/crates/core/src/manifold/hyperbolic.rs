use crate::util::{axpy, sinhc};

/// Minkowski bilinear form `-u₀v₀ + Σ uᵢvᵢ`.
pub(crate) fn minkowski(u: &[f64], v: &[f64]) -> f64 {
    -u[0] * v[0] + u[1..].iter().zip(&v[1..]).map(|(a, b)| a * b).sum::<f64>()
}

/// Puts a point back on the upper sheet by recomputing its time coordinate.
pub(super) fn lift(x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    y[0] = (1.0 + x[1..].iter().map(|c| c * c).sum::<f64>()).sqrt();
    y
}

pub(super) fn exp(x: &[f64], v: &[f64]) -> Vec<f64> {
    let theta = minkowski(v, v).max(0.0).sqrt();
    let (c, s) = (theta.cosh(), sinhc(theta));
    let y: Vec<f64> = x.iter().zip(v).map(|(a, b)| c * a + s * b).collect();
    lift(&y)
}

fn angle_and_normal(x: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let alpha = -minkowski(x, y);
    let mut w = y.to_vec();
    axpy(&mut w, -alpha, x);
    let s = minkowski(&w, &w).max(0.0).sqrt();
    (s.asinh(), w)
}

pub(super) fn log(x: &[f64], y: &[f64]) -> Vec<f64> {
    let (theta, w) = angle_and_normal(x, y);
    let s = theta.sinh();
    let f = if theta < 1e-4 { 1.0 - theta * theta / 6.0 } else { theta / s };
    w.iter().map(|c| c * f).collect()
}

pub(super) fn dist(x: &[f64], y: &[f64]) -> f64 {
    angle_and_normal(x, y).0
}

pub(super) fn transport(x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64> {
    let alpha = -minkowski(x, y);
    let k = minkowski(y, v) / (alpha + 1.0);
    v.iter().zip(x.iter().zip(y)).map(|(vi, (xi, yi))| vi + k * (xi + yi)).collect()
}

pub(super) fn project(x: &[f64], w: &[f64]) -> Vec<f64> {
    let c = minkowski(x, w);
    let mut out = w.to_vec();
    axpy(&mut out, c, x);
    out
}

fn lowered(i: usize) -> f64 {
    if i == 0 {
        -1.0
    } else {
        1.0
    }
}

/// `d/dt P_x e_i` along `ẋ = v`, where `P_x w = w + ⟨x,w⟩_L x`.
pub(super) fn projection_derivative(x: &[f64], v: &[f64], i: usize) -> Vec<f64> {
    let (a, b) = (lowered(i) * v[i], lowered(i) * x[i]);
    x.iter().zip(v).map(|(xj, vj)| a * xj + b * vj).collect()
}

/// Coordinate fields `∂/∂x_i` of the chart `(x₁..x_d) ↦ (√(1+|x|²), x₁..x_d)`.
pub(super) fn coordinate_fields(x: &[f64]) -> Vec<Vec<f64>> {
    let p = x.len();
    (1..p)
        .map(|i| {
            let mut e = vec![0.0; p];
            e[i] = 1.0;
            e[0] = x[i] / x[0];
            e
        })
        .collect()
}

pub(super) fn coordinate_fields_derivative(x: &[f64], v: &[f64]) -> Vec<Vec<f64>> {
    let p = x.len();
    (1..p)
        .map(|i| {
            let mut e = vec![0.0; p];
            e[0] = v[i] / x[0] - x[i] * v[0] / (x[0] * x[0]);
            e
        })
        .collect()
}
