use crate::error::{Error, Result};
use crate::util::{add, axpy, dot, inv_sinc, norm, sinc};
use rand::Rng;
use rand_distr::StandardNormal;

const CUT_TOL: f64 = 1e-9;

pub(super) fn exp(x: &[f64], v: &[f64]) -> Vec<f64> {
    let theta = norm(v);
    let (c, s) = (theta.cos(), sinc(theta));
    let mut y: Vec<f64> = x.iter().zip(v).map(|(a, b)| c * a + s * b).collect();
    let n = norm(&y);
    y.iter_mut().for_each(|c| *c /= n);
    y
}

fn angle_and_normal(x: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let c = dot(x, y);
    let mut w = y.to_vec();
    axpy(&mut w, -c, x);
    let s = norm(&w);
    (s.atan2(c), w)
}

pub(super) fn log(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if norm(&add(x, y)) < CUT_TOL {
        return Err(Error::CutLocus);
    }
    let (theta, w) = angle_and_normal(x, y);
    // |w| = sin θ for unit inputs
    let f = inv_sinc(theta);
    Ok(w.iter().map(|c| c * f).collect())
}

pub(super) fn dist(x: &[f64], y: &[f64]) -> f64 {
    angle_and_normal(x, y).0
}

pub(super) fn transport(x: &[f64], y: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let xy = add(x, y);
    if norm(&xy) < CUT_TOL {
        return Err(Error::CutLocus);
    }
    let k = dot(v, y) / (1.0 + dot(x, y));
    let mut out = v.to_vec();
    axpy(&mut out, -k, &xy);
    Ok(out)
}

pub(super) fn project(x: &[f64], w: &[f64]) -> Vec<f64> {
    let c = dot(x, w);
    let mut out = w.to_vec();
    axpy(&mut out, -c, x);
    out
}

/// `d/dt (I - x xᵀ) e_i` along `ẋ = v`.
pub(super) fn projection_derivative(x: &[f64], v: &[f64], i: usize) -> Vec<f64> {
    x.iter().zip(v).map(|(xj, vj)| -(vj * x[i] + xj * v[i])).collect()
}

pub(super) fn sample_uniform<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..=d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&g);
        if n > 1e-12 {
            return g.iter().map(|c| c / n).collect();
        }
    }
}
