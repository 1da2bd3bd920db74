//! SO(3) in row-major 3×3 matrix form.

use crate::error::{Error, Result};
use crate::util::{inv_sinc, one_minus_cos_over_sq, sinc};
use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

const CUT_TOL: f64 = 1e-9;

pub(crate) fn to_mat(x: &[f64]) -> Matrix3<f64> {
    Matrix3::from_row_slice(x)
}

pub(crate) fn from_mat(m: &Matrix3<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(9);
    for i in 0..3 {
        for j in 0..3 {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Skew-symmetric matrix `[ω]_×`.
pub fn hat(w: &[f64; 3]) -> Matrix3<f64> {
    Matrix3::new(0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0)
}

/// Inverse of [`hat`] applied to the skew part of `m`.
pub fn vee(m: &Matrix3<f64>) -> [f64; 3] {
    [0.5 * (m[(2, 1)] - m[(1, 2)]), 0.5 * (m[(0, 2)] - m[(2, 0)]), 0.5 * (m[(1, 0)] - m[(0, 1)])]
}

/// Rotation `exp([ω]_×)` by Rodrigues' formula.
pub fn rodrigues(w: &[f64; 3]) -> Matrix3<f64> {
    let theta = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let k = hat(w);
    Matrix3::identity() + k * sinc(theta) + k * k * one_minus_cos_over_sq(theta)
}

pub(super) fn check_point(x: &[f64]) -> Result<()> {
    let q = to_mat(x);
    let e = (q.transpose() * q - Matrix3::identity()).abs().max();
    let det = q.determinant();
    if e > super::POINT_TOL || (det - 1.0).abs() > super::POINT_TOL {
        return Err(Error::InvalidPoint(format!("|QᵀQ - I| = {e:.3e}, det = {det}")));
    }
    Ok(())
}

/// `QᵀR` in row-major form.
pub(super) fn relative(q: &[f64], r: &[f64]) -> Matrix3<f64> {
    to_mat(q).transpose() * to_mat(r)
}

fn angle_parts(r: &Matrix3<f64>) -> (f64, [f64; 3]) {
    let s = vee(r);
    let sn = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
    let c = 0.5 * (r.trace() - 1.0);
    (sn.atan2(c), s)
}

/// Rotation angle of `r` in `[0, π]`.
pub(crate) fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    angle_parts(r).0
}

/// Axis-angle vector of a rotation with angle strictly below π.
pub(crate) fn log_rotation(r: &Matrix3<f64>) -> Result<[f64; 3]> {
    let (theta, s) = angle_parts(r);
    if PI - theta < CUT_TOL {
        return Err(Error::CutLocus);
    }
    if theta < PI - 1e-3 {
        let f = inv_sinc(theta);
        return Ok([s[0] * f, s[1] * f, s[2] * f]);
    }
    // near π the skew part carries little information: read the axis from
    // the symmetric part (1 - cos θ) a aᵀ instead
    let c = theta.cos();
    let b = (r + r.transpose()) * 0.5 - Matrix3::identity() * c;
    let k = (0..3).max_by(|&i, &j| b[(i, i)].partial_cmp(&b[(j, j)]).unwrap()).unwrap();
    let denom = (b[(k, k)] * (1.0 - c)).sqrt();
    let mut a = [b[(0, k)] / denom, b[(1, k)] / denom, b[(2, k)] / denom];
    let an = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    a.iter_mut().for_each(|v| *v /= an);
    if a[0] * s[0] + a[1] * s[1] + a[2] * s[2] < 0.0 {
        a.iter_mut().for_each(|v| *v = -*v);
    }
    Ok([a[0] * theta, a[1] * theta, a[2] * theta])
}

pub(super) fn exp(q: &[f64], v: &[f64]) -> Vec<f64> {
    let qm = to_mat(q);
    let w = vee(&(qm.transpose() * to_mat(v)));
    let out = qm * rodrigues(&w);
    from_mat(&out)
}

pub(super) fn log(q: &[f64], r: &[f64]) -> Result<Vec<f64>> {
    let w = log_rotation(&relative(q, r))?;
    Ok(from_mat(&(to_mat(q) * hat(&w))))
}

/// Transport along `Q exp(tΩ)` for the bi-invariant metric:
/// `Q A ↦ Q e^{Ω/2} A e^{Ω/2}`.
pub(super) fn transport(q: &[f64], r: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let w = log_rotation(&relative(q, r))?;
    let half = rodrigues(&[0.5 * w[0], 0.5 * w[1], 0.5 * w[2]]);
    let qm = to_mat(q);
    let a = qm.transpose() * to_mat(v);
    let a = (a - a.transpose()) * 0.5;
    Ok(from_mat(&(qm * half * a * half)))
}

/// `Q skew(QᵀW) = ½(W - Q Wᵀ Q)`.
pub(super) fn project(q: &[f64], w: &[f64]) -> Vec<f64> {
    let (qm, wm) = (to_mat(q), to_mat(w));
    from_mat(&((wm - qm * wm.transpose() * qm) * 0.5))
}

/// `d/dt ½(E_i - Q E_iᵀ Q)` along `Q̇ = V`.
pub(super) fn projection_derivative(q: &[f64], v: &[f64], i: usize) -> Vec<f64> {
    let mut e = Matrix3::zeros();
    e[(i / 3, i % 3)] = 1.0;
    let (qm, vm) = (to_mat(q), to_mat(v));
    from_mat(&((vm * e.transpose() * qm + qm * e.transpose() * vm) * -0.5))
}

/// Nearest rotation in Frobenius norm.
pub(super) fn polar(x: &[f64]) -> Vec<f64> {
    let m = to_mat(x);
    let svd = m.svd(true, true);
    let (mut u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    if (u * vt).determinant() < 0.0 {
        for i in 0..3 {
            u[(i, 2)] = -u[(i, 2)];
        }
    }
    from_mat(&(u * vt))
}

/// Haar-uniform rotation: Gram–Schmidt on a Gaussian matrix, then a
/// column sign flip when the determinant is negative.
pub(super) fn sample_uniform<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    loop {
        let g = Matrix3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let mut cols: Vec<nalgebra::Vector3<f64>> = Vec::with_capacity(3);
        let mut ok = true;
        for j in 0..3 {
            let mut c = g.column(j).into_owned();
            for b in &cols {
                c -= b * b.dot(&c);
            }
            let n = c.norm();
            if n < 1e-10 {
                ok = false;
                break;
            }
            cols.push(c / n);
        }
        if !ok {
            continue;
        }
        let mut q = Matrix3::from_columns(&cols);
        if q.determinant() < 0.0 {
            for i in 0..3 {
                q[(i, 2)] = -q[(i, 2)];
            }
        }
        return from_mat(&q);
    }
}

/// Lie-algebra basis `E_ij = U_ij - U_ji` for `i < j`.
pub(crate) fn lie_basis() -> [Matrix3<f64>; 3] {
    let mut out = [Matrix3::zeros(); 3];
    for (k, (i, j)) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
        out[k][(i, j)] = 1.0;
        out[k][(j, i)] = -1.0;
    }
    out
}

/// `{M E_ij}` for a (not necessarily orthogonal) matrix `M`.
pub(super) fn lie_fields(m: &[f64]) -> Vec<Vec<f64>> {
    let mm = to_mat(m);
    lie_basis().iter().map(|e| from_mat(&(mm * e))).collect()
}
