use crate::util::{angle_diff, wrap_angle};

pub(super) fn exp(x: &[f64], v: &[f64]) -> Vec<f64> {
    x.iter().zip(v).map(|(a, b)| wrap_angle(a + b)).collect()
}

/// Componentwise shortest signed angle; a difference of exactly π maps to +π.
pub(super) fn log(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(&a, &b)| angle_diff(a, b)).collect()
}
