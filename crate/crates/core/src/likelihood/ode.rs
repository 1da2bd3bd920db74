//! Dormand–Prince 5(4) on embedded manifolds, carrying a scalar integral.

use crate::error::{Error, Result};
use crate::manifold::Manifold;

/// How stage and step points are put back on the manifold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Retraction {
    /// Ambient Runge–Kutta update followed by closest-point projection.
    ProjectEachStep,
    /// Update projected to the tangent space at the step start and mapped
    /// through `exp`.
    ExpFromTangent,
}

impl std::str::FromStr for Retraction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "project" | "projecteachstep" => Ok(Retraction::ProjectEachStep),
            "exp" | "expfromtangent" => Ok(Retraction::ExpFromTangent),
            _ => Err(Error::InvalidArgument(format!("unknown retraction '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdeConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Cap on attempted steps, accepted or not.
    pub max_steps: usize,
    pub retraction: Retraction,
}

impl Default for OdeConfig {
    fn default() -> Self {
        OdeConfig { rtol: 1e-5, atol: 1e-5, max_steps: 100_000, retraction: Retraction::ProjectEachStep }
    }
}

impl OdeConfig {
    pub fn with_tol(tol: f64) -> Self {
        OdeConfig { rtol: tol, atol: tol, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::InvalidArgument("ODE tolerances must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// A point with the integral accumulated up to time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct OdeState {
    pub t: f64,
    pub point: Vec<f64>,
    pub logdet: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdeSolution {
    /// Start state followed by every accepted step.
    pub states: Vec<OdeState>,
    pub accepted: usize,
    pub rejected: usize,
}

impl OdeSolution {
    pub fn end(&self) -> &OdeState {
        self.states.last().expect("solutions hold the start state")
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights (equal to the last row of `A`).
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
/// Difference between the fifth- and fourth-order weights.
const E: [f64; 7] = [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];

fn retract(m: &Manifold, x: &[f64], w: &[f64], how: Retraction) -> Vec<f64> {
    match how {
        Retraction::ProjectEachStep => {
            let y: Vec<f64> = x.iter().zip(w).map(|(a, b)| a + b).collect();
            m.project_point(&y)
        }
        Retraction::ExpFromTangent => m.exp_unchecked(x, &m.project(x, w)),
    }
}

/// Integrates `ẋ = v(t, x)`, `ℓ̇ = δ(t, x)` from `t0` to `t1` where
/// `field` returns `(v, δ)`. Either direction of time is allowed.
pub fn rk45_integrate<F>(m: &Manifold, mut field: F, x0: &[f64], t0: f64, t1: f64, cfg: &OdeConfig) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64]) -> Result<(Vec<f64>, f64)>,
{
    cfg.validate()?;
    m.check_point(x0)?;
    if t0 == t1 || !(t0.is_finite() && t1.is_finite()) {
        return Err(Error::InvalidArgument(format!("need distinct finite end times, got {t0} and {t1}")));
    }
    let span = (t1 - t0).abs();
    let dir = (t1 - t0).signum();
    let n = x0.len();
    let mut t = t0;
    let mut x = x0.to_vec();
    let mut ell = 0.0;
    let mut h = span;
    let mut prev_err: f64 = 1e-4;
    let mut states = vec![OdeState { t, point: x.clone(), logdet: 0.0 }];
    let (mut accepted, mut rejected) = (0, 0);
    let mut k0 = field(t, &x)?;

    while (t1 - t) * dir > 0.0 {
        if accepted + rejected >= cfg.max_steps {
            return Err(Error::MaxStepsExceeded(cfg.max_steps));
        }
        let last = h >= (t1 - t).abs();
        if last {
            h = (t1 - t).abs();
        }
        let hs = h * dir;
        let mut kx: Vec<Vec<f64>> = Vec::with_capacity(7);
        let mut kl: Vec<f64> = Vec::with_capacity(7);
        kx.push(k0.0.clone());
        kl.push(k0.1);
        for s in 1..7 {
            let mut w = vec![0.0; n];
            for (j, a) in A[s].iter().enumerate().take(s) {
                if *a != 0.0 {
                    crate::util::axpy(&mut w, hs * a, &kx[j]);
                }
            }
            let xs = retract(m, &x, &w, cfg.retraction);
            let (v, d) = field(t + C[s] * hs, &xs)?;
            kx.push(v);
            kl.push(d);
        }
        let mut w = vec![0.0; n];
        let mut err_x = vec![0.0; n];
        let (mut dl, mut err_l) = (0.0, 0.0);
        for s in 0..7 {
            crate::util::axpy(&mut w, hs * B[s], &kx[s]);
            crate::util::axpy(&mut err_x, hs * E[s], &kx[s]);
            dl += hs * B[s] * kl[s];
            err_l += hs * E[s] * kl[s];
        }
        let x_new = retract(m, &x, &w, cfg.retraction);
        let ell_new = ell + dl;

        let mut acc = 0.0;
        for i in 0..n {
            let sc = cfg.atol + cfg.rtol * x[i].abs().max(x_new[i].abs());
            acc += (err_x[i] / sc).powi(2);
        }
        let sc = cfg.atol + cfg.rtol * ell.abs().max(ell_new.abs());
        acc += (err_l / sc).powi(2);
        let err = (acc / (n + 1) as f64).sqrt();
        if !err.is_finite() {
            return Err(Error::NonFinite(format!("ODE error estimate at t = {t}")));
        }

        if err <= 1.0 {
            t = if last { t1 } else { t + hs };
            x = x_new;
            ell = ell_new;
            accepted += 1;
            states.push(OdeState { t, point: x.clone(), logdet: ell });
            // the last stage was evaluated at the new point
            k0 = (kx[6].clone(), kl[6]);
            let fac = if err == 0.0 { 10.0 } else { 0.9 * err.powf(-0.7 / 5.0) * prev_err.powf(0.4 / 5.0) };
            h *= fac.clamp(0.2, 10.0);
            prev_err = err.max(1e-4);
        } else {
            rejected += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            if h < 1e-12 * span {
                return Err(Error::StiffnessDetected { t });
            }
        }
    }
    Ok(OdeSolution { states, accepted, rejected })
}
