//! Score-matching losses on a single batch.

use crate::error::{Error, Result};
use crate::heat_kernel::{hk_score, hk_score_truncated, hk_score_varadhan, HeatKernelConfig};
use crate::manifold::Manifold;
use crate::nn::{loss_grad, record_score, NetworkSpec, ParamVector, Tape, Var};
use crate::sde::{NoisingProcess, ProcessKind};
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Closed-form conditional score (tori and the Euclidean OU process).
    DsmExact,
    /// Conditional score from the truncated heat-kernel series.
    DsmTruncated,
    /// Small-time target `exp_{x_t}^{-1}(x_0) / u(t)`.
    DsmVaradhan,
    /// Varadhan target between `x_s` and `x_t` with `s = max(ε, t - τ)`.
    DsmVaradhanSegmented,
    IsmExact,
    IsmHutchinson,
}

impl LossKind {
    pub fn is_dsm(self) -> bool {
        !matches!(self, LossKind::IsmExact | LossKind::IsmHutchinson)
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "dsmexact" => Ok(LossKind::DsmExact),
            "dsmtruncated" => Ok(LossKind::DsmTruncated),
            "dsmvaradhan" => Ok(LossKind::DsmVaradhan),
            "dsmvaradhansegmented" | "dsmsegmented" => Ok(LossKind::DsmVaradhanSegmented),
            "ismexact" => Ok(LossKind::IsmExact),
            "ismhutchinson" | "ssm" => Ok(LossKind::IsmHutchinson),
            _ => Err(Error::InvalidArgument(format!("unknown loss '{s}'"))),
        }
    }
}

/// Per-time weight `λ_t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weighting {
    /// `λ_t = β(t)`.
    BetaT,
    /// `λ_t = 1 - e^{-u(t)}`.
    VarProxy,
    /// `λ_t = 1`.
    Unit,
}

impl std::str::FromStr for Weighting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "betat" | "beta" | "g2" => Ok(Weighting::BetaT),
            "varproxy" | "var" => Ok(Weighting::VarProxy),
            "unit" | "one" | "none" => Ok(Weighting::Unit),
            _ => Err(Error::InvalidArgument(format!("unknown weighting '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub weighting: Weighting,
    /// Probes per item for [`LossKind::IsmHutchinson`].
    pub hutchinson_probes: usize,
    /// Series settings for truncated targets; `tau` is also the segment
    /// length of [`LossKind::DsmVaradhanSegmented`].
    pub heat_kernel: HeatKernelConfig,
}

impl LossSpec {
    /// `kind` with its usual weighting: variance proxy for DSM, `β(t)` for ISM.
    pub fn new(kind: LossKind) -> Self {
        let weighting = if kind.is_dsm() { Weighting::VarProxy } else { Weighting::BetaT };
        LossSpec { kind, weighting, hutchinson_probes: 1, heat_kernel: HeatKernelConfig::default() }
    }

    pub fn with_weighting(mut self, weighting: Weighting) -> Self {
        self.weighting = weighting;
        self
    }

    /// Checks that the loss can be evaluated for `process`.
    pub fn validate(&self, process: &NoisingProcess) -> Result<()> {
        self.heat_kernel.validate()?;
        let m = &process.manifold;
        let unsupported = |what: &str| Err(Error::UnsupportedManifold(format!("{what} on {m}")));
        match self.kind {
            LossKind::DsmExact => match (m, &process.kind) {
                (Manifold::Torus(_), ProcessKind::BrownianCompact) | (Manifold::Euclidean(_), ProcessKind::EuclideanOU) => Ok(()),
                _ => unsupported("closed-form DSM targets"),
            },
            LossKind::DsmTruncated => match (m, &process.kind) {
                (Manifold::Torus(_) | Manifold::Sphere(_), ProcessKind::BrownianCompact) => Ok(()),
                _ => unsupported("truncated heat-kernel targets"),
            },
            LossKind::IsmHutchinson if self.hutchinson_probes == 0 => {
                Err(Error::InvalidArgument("Hutchinson estimator needs at least one probe".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn weight(&self, process: &NoisingProcess, t: f64) -> f64 {
        match self.weighting {
            Weighting::BetaT => process.schedule.beta(t),
            Weighting::VarProxy => -(-process.schedule.u(t)).exp_m1(),
            Weighting::Unit => 1.0,
        }
    }

    /// Start of the segment ending at `t`.
    pub fn segment_start(&self, process: &NoisingProcess, t: f64) -> f64 {
        process.schedule.eps.max(t - self.heat_kernel.tau)
    }
}

/// One training example: data point `x0`, noised point `xt` at time `t`,
/// the intermediate point for segmented targets and Hutchinson probes.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x0: Vec<f64>,
    pub t: f64,
    pub xt: Vec<f64>,
    pub xs: Option<(f64, Vec<f64>)>,
    pub probes: Vec<Vec<f64>>,
}

impl Sample {
    pub fn new(x0: Vec<f64>, t: f64, xt: Vec<f64>) -> Self {
        Sample { x0, t, xt, xs: None, probes: Vec::new() }
    }
}

/// DSM regression target for `sample`; `None` when `x_t` lies in the cut
/// locus of the anchor point.
pub fn dsm_target(loss: &LossSpec, process: &NoisingProcess, sample: &Sample) -> Result<Option<Vec<f64>>> {
    let m = &process.manifold;
    let u = process.schedule.u(sample.t);
    let res = match loss.kind {
        LossKind::DsmExact => match &process.kind {
            ProcessKind::EuclideanOU => {
                let a = (-u / 2.0).exp();
                let var = -(-u).exp_m1();
                Ok(sample.xt.iter().zip(&sample.x0).map(|(x, x0)| -(x - a * x0) / var).collect())
            }
            _ => hk_score_truncated(m, &sample.x0, &sample.xt, u, &HeatKernelConfig::default()),
        },
        LossKind::DsmTruncated => hk_score(m, &sample.x0, &sample.xt, u, &loss.heat_kernel),
        LossKind::DsmVaradhan => hk_score_varadhan(m, &sample.x0, &sample.xt, u),
        LossKind::DsmVaradhanSegmented => {
            let (s, xs) = sample.xs.as_ref().ok_or_else(|| Error::InvalidArgument("segmented loss needs an intermediate point".into()))?;
            hk_score_varadhan(m, xs, &sample.xt, u - process.schedule.u(*s))
        }
        LossKind::IsmExact | LossKind::IsmHutchinson => {
            return Err(Error::InvalidArgument("implicit losses have no regression target".into()))
        }
    };
    match res {
        Ok(v) => Ok(Some(v)),
        Err(Error::CutLocus) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Mean loss over the items that were not dropped, with its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    pub value: f64,
    pub grad: Vec<f64>,
    pub used: usize,
    /// Items whose target fell in the cut locus.
    pub dropped: usize,
}

/// Items per parallel work unit; fixed so that the summation order does
/// not depend on the thread count.
const CHUNK: usize = 8;

fn weighted_sum(tape: &mut Tape, terms: Vec<Var>, s: f64) -> Var {
    let mut acc = terms[0];
    for v in &terms[1..] {
        acc = tape.add(acc, *v);
    }
    tape.scale(acc, s)
}

/// `λ_t ½‖s_θ(t, x_t) - target‖²` and its gradient; `None` if dropped.
fn dsm_item(
    params: &ParamVector,
    net: &NetworkSpec,
    loss: &LossSpec,
    process: &NoisingProcess,
    sample: &Sample,
) -> Result<Option<(f64, Vec<f64>)>> {
    let Some(target) = dsm_target(loss, process, sample)? else { return Ok(None) };
    let w = process.manifold.metric_weights();
    let lambda = loss.weight(process, sample.t);
    let out = loss_grad(params, |tape| {
        let r = record_score(net, tape, sample.t, &sample.xt, &[])?;
        let tv = tape.leaf(target);
        let d = tape.sub(r.score, tv);
        let n = tape.dot(d, d, Some(&w));
        Ok(tape.scale(n, 0.5 * lambda))
    })?;
    Ok(Some(out))
}

/// `λ_t (½‖s_θ‖² + div s_θ)` with the exact or probe-based divergence.
fn ism_item(
    params: &ParamVector,
    net: &NetworkSpec,
    loss: &LossSpec,
    process: &NoisingProcess,
    sample: &Sample,
) -> Result<(f64, Vec<f64>)> {
    let m = &process.manifold;
    let w = m.metric_weights();
    let lambda = loss.weight(process, sample.t);
    let (dirs, div_scale) = match loss.kind {
        LossKind::IsmExact => (m.tangent_basis(&sample.xt), 1.0),
        _ => {
            if sample.probes.is_empty() {
                return Err(Error::InvalidArgument("Hutchinson loss needs probes on every sample".into()));
            }
            (sample.probes.clone(), 1.0 / sample.probes.len() as f64)
        }
    };
    loss_grad(params, |tape| {
        let r = record_score(net, tape, sample.t, &sample.xt, &dirs)?;
        let sq = tape.dot(r.score, r.score, Some(&w));
        let half = tape.scale(sq, 0.5);
        let mut terms = vec![half];
        for (e, j) in dirs.iter().zip(&r.jvps) {
            let we: Vec<f64> = e.iter().zip(&w).map(|(a, b)| a * b * div_scale).collect();
            terms.push(tape.dot_const(*j, &we));
        }
        Ok(weighted_sum(tape, terms, lambda))
    })
}

fn reduce(parts: Vec<(f64, Vec<f64>, usize, usize)>, n_params: usize) -> BatchLoss {
    let (mut value, mut grad, mut used, mut dropped) = (0.0, vec![0.0; n_params], 0, 0);
    for (v, g, u, d) in parts {
        value += v;
        crate::util::axpy(&mut grad, 1.0, &g);
        used += u;
        dropped += d;
    }
    if used > 0 {
        value /= used as f64;
        grad.iter_mut().for_each(|g| *g /= used as f64);
    }
    BatchLoss { value, grad, used, dropped }
}

fn batch_map<F>(params: &ParamVector, batch: &[Sample], item: F) -> Result<BatchLoss>
where
    F: Fn(&Sample) -> Result<Option<(f64, Vec<f64>)>> + Sync,
{
    let n = params.len();
    let parts = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let (mut v, mut g, mut used, mut dropped) = (0.0, vec![0.0; n], 0, 0);
            for s in chunk {
                match item(s)? {
                    Some((lv, lg)) => {
                        v += lv;
                        crate::util::axpy(&mut g, 1.0, &lg);
                        used += 1;
                    }
                    None => dropped += 1,
                }
            }
            Ok((v, g, used, dropped))
        })
        .collect::<Result<Vec<_>>>()?;
    let out = reduce(parts, n);
    if out.dropped > 0 {
        log::debug!("dropped {} of {} items in the cut locus", out.dropped, batch.len());
    }
    Ok(out)
}

/// Denoising score-matching loss over `batch`.
pub fn dsm_loss(params: &ParamVector, net: &NetworkSpec, loss: &LossSpec, process: &NoisingProcess, batch: &[Sample]) -> Result<BatchLoss> {
    if !loss.kind.is_dsm() {
        return Err(Error::InvalidArgument("dsm_loss called with an implicit loss".into()));
    }
    batch_map(params, batch, |s| dsm_item(params, net, loss, process, s))
}

/// Implicit score-matching loss over `batch`.
pub fn ism_loss(params: &ParamVector, net: &NetworkSpec, loss: &LossSpec, process: &NoisingProcess, batch: &[Sample]) -> Result<BatchLoss> {
    if loss.kind.is_dsm() {
        return Err(Error::InvalidArgument("ism_loss called with a denoising loss".into()));
    }
    batch_map(params, batch, |s| ism_item(params, net, loss, process, s).map(Some))
}

/// Dispatches to [`dsm_loss`] or [`ism_loss`].
pub fn batch_loss(
    params: &ParamVector,
    net: &NetworkSpec,
    loss: &LossSpec,
    process: &NoisingProcess,
    batch: &[Sample],
) -> Result<BatchLoss> {
    if loss.kind.is_dsm() {
        dsm_loss(params, net, loss, process, batch)
    } else {
        ism_loss(params, net, loss, process, batch)
    }
}
