//! Log-likelihoods through the probability-flow ODE.
//!
//! The flow `ẋ = β(t) b(x) - ½ β(t) s(t, x)` transports the model marginals,
//! so `log p_ε(x) = log p_ref(x_T) + ∫_ε^T div(flow)(t, x_t) dt` along the
//! trajectory started at `x`.

mod ode;

pub use ode::{rk45_integrate, OdeConfig, OdeSolution, OdeState, Retraction};

use crate::error::{Error, Result};
use crate::nn::ScoreField;
use crate::sde::{NoisingProcess, ProcessKind};
use rayon::prelude::*;
use std::fmt::Write as _;

/// Probability-flow field at forward time `t`.
pub fn prob_flow_field<F: ScoreField + ?Sized>(process: &NoisingProcess, score: &F, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let mut v = process.drift(t, x)?;
    crate::util::axpy(&mut v, -0.5 * process.schedule.beta(t), &score.score(t, x)?);
    Ok(v)
}

/// Divergence of the unscaled drift `b`.
fn base_drift_divergence(process: &NoisingProcess, x: &[f64]) -> Result<f64> {
    let m = &process.manifold;
    match &process.kind {
        ProcessKind::BrownianCompact => Ok(0.0),
        ProcessKind::EuclideanOU => Ok(-0.5 * x.len() as f64),
        ProcessKind::LangevinWrapped { .. } => {
            // central differences along geodesics
            let h = 1e-5;
            let mut div = 0.0;
            for e in m.tangent_basis(x) {
                let fwd = m.exp_unchecked(x, &crate::util::scale(&e, h));
                let bwd = m.exp_unchecked(x, &crate::util::scale(&e, -h));
                let (bf, bb) = (process.base_drift(&fwd)?, process.base_drift(&bwd)?);
                let d: Vec<f64> = bf.iter().zip(&bb).map(|(p, q)| (p - q) / (2.0 * h)).collect();
                div += m.inner(x, &e, &d);
            }
            Ok(div)
        }
    }
}

/// Flow field and its exact divergence.
pub fn prob_flow_with_divergence<F: ScoreField + ?Sized>(
    process: &NoisingProcess,
    score: &F,
    t: f64,
    x: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let beta = process.schedule.beta(t);
    let v = prob_flow_field(process, score, t, x)?;
    let div = beta * base_drift_divergence(process, x)? - 0.5 * beta * score.divergence(t, x)?;
    Ok((v, div))
}

/// Log-likelihood of one point and the solver work it took.
#[derive(Clone, Debug, PartialEq)]
pub struct PointLikelihood {
    /// Log-density with respect to the Riemannian volume measure.
    pub log_likelihood: f64,
    pub steps: usize,
    /// Endpoint of the flow at `T`.
    pub end: Vec<f64>,
}

/// Integrates the flow from `x` at `ε` to `T` and returns `log p_ε(x)`.
pub fn log_likelihood<F: ScoreField + ?Sized>(process: &NoisingProcess, score: &F, x: &[f64], cfg: &OdeConfig) -> Result<PointLikelihood> {
    let sch = &process.schedule;
    let m = &process.manifold;
    m.check_point(x)?;
    let sol = rk45_integrate(m, |t, y| prob_flow_with_divergence(process, score, t, y), x, sch.eps, sch.horizon, cfg)?;
    let end = sol.end();
    let lp = process.reference_log_density(&end.point)? + end.logdet;
    Ok(PointLikelihood { log_likelihood: lp, steps: sol.accepted + sol.rejected, end: end.point.clone() })
}

/// Per-point results of [`nll`] in input order.
#[derive(Clone, Debug, PartialEq)]
pub struct NllReport {
    pub points: Vec<Result<PointLikelihood>>,
}

impl NllReport {
    fn ok(&self) -> impl Iterator<Item = &PointLikelihood> {
        self.points.iter().filter_map(|p| p.as_ref().ok())
    }

    pub fn excluded(&self) -> usize {
        self.points.iter().filter(|p| p.is_err()).count()
    }

    /// Mean negative log-likelihood over the points that integrated.
    pub fn mean_nll(&self) -> f64 {
        let n = self.ok().count();
        -self.ok().map(|p| p.log_likelihood).sum::<f64>() / n as f64
    }

    /// Standard error of [`Self::mean_nll`].
    pub fn std_error(&self) -> f64 {
        let n = self.ok().count();
        if n < 2 {
            return f64::NAN;
        }
        let mean = -self.mean_nll();
        let var = self.ok().map(|p| (p.log_likelihood - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    }

    /// `index log_likelihood steps` per point, then a summary comment with
    /// the mean NLL, its ± 2·SE interval and the excluded count.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# index log_likelihood steps\n");
        for (i, p) in self.points.iter().enumerate() {
            match p {
                Ok(p) => writeln!(out, "{i} {:?} {}", p.log_likelihood, p.steps).unwrap(),
                Err(e) => writeln!(out, "# {i} excluded: {e}").unwrap(),
            }
        }
        let se = self.std_error();
        writeln!(
            out,
            "# mean_nll {:.6} std_error {:.6} interval {:.6} {:.6} excluded {}",
            self.mean_nll(),
            se,
            self.mean_nll() - 2.0 * se,
            self.mean_nll() + 2.0 * se,
            self.excluded()
        )
        .unwrap();
        out
    }
}

/// Log-likelihoods of `points` under the model, evaluated in parallel.
pub fn nll<F: ScoreField + ?Sized>(process: &NoisingProcess, score: &F, points: &[Vec<f64>], cfg: &OdeConfig) -> NllReport {
    let points = points.par_iter().map(|x| log_likelihood(process, score, x, cfg)).collect::<Vec<_>>();
    for (i, p) in points.iter().enumerate() {
        if let Err(e) = p {
            log::warn!("point {i} excluded from the NLL: {e}");
        }
    }
    NllReport { points }
}

/// Runs the flow from `x` at `ε` to `T` and back again, returning the
/// recovered point.
pub fn round_trip<F: ScoreField + ?Sized>(process: &NoisingProcess, score: &F, x: &[f64], cfg: &OdeConfig) -> Result<Vec<f64>> {
    let sch = &process.schedule;
    let m = &process.manifold;
    let f = |t: f64, y: &[f64]| prob_flow_with_divergence(process, score, t, y);
    let fwd = rk45_integrate(m, f, x, sch.eps, sch.horizon, cfg)?;
    let back = rk45_integrate(m, f, &fwd.end().point, sch.horizon, sch.eps, cfg)?;
    if !back.end().logdet.is_finite() {
        return Err(Error::NonFinite("log-determinant on the return trip".into()));
    }
    Ok(back.end().point.clone())
}
