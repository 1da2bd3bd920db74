//! Score-network training: losses, Adam and the training loop.

mod loss;

pub use loss::{batch_loss, dsm_loss, dsm_target, ism_loss, BatchLoss, LossKind, LossSpec, Sample, Weighting};

use crate::config::{parse_value, KeyValues};
use crate::error::{Error, Result};
use crate::nn::{draw_probe, NetworkSpec, ParamVector, Probe};
use crate::sde::{forward_sample, grw_path, NoisingProcess};
use rand::Rng;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::path::Path;

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64) -> Self {
        Adam { beta1, beta2, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch { expected: self.m.len(), got: grad.len().min(params.len()) });
        }
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps as i32);
        let c2 = 1.0 - self.beta2.powi(self.steps as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iters: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Linear warm-up length; the rate then follows a cosine to zero.
    pub warmup: usize,
    pub seed: u64,
    /// Random-walk steps per forward sample.
    pub forward_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            iters: 1000,
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            warmup: 1000,
            seed: 0,
            forward_steps: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.forward_steps == 0 {
            return Err(Error::InvalidArgument("batch_size and forward_steps must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::InvalidArgument("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Step size for 0-based iteration `k`.
    pub fn learning_rate_at(&self, k: usize) -> f64 {
        let step = (k + 1) as f64;
        if k < self.warmup {
            return self.learning_rate * step / self.warmup as f64;
        }
        let rest = self.iters.saturating_sub(self.warmup).max(1) as f64;
        let frac = ((k - self.warmup) as f64 / rest).min(1.0);
        self.learning_rate * 0.5 * (1.0 + (PI * frac).cos())
    }

    /// Applies the recognised keys of `kv`; unknown keys are left alone.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        for (k, v) in kv.iter() {
            match k {
                "batch_size" => self.batch_size = parse_value(k, v)?,
                "iters" => self.iters = parse_value(k, v)?,
                "lr" | "learning_rate" => self.learning_rate = parse_value(k, v)?,
                "beta1" => self.beta1 = parse_value(k, v)?,
                "beta2" => self.beta2 = parse_value(k, v)?,
                "warmup" => self.warmup = parse_value(k, v)?,
                "seed" => self.seed = parse_value(k, v)?,
                "forward_steps" => self.forward_steps = parse_value(k, v)?,
                _ => {}
            }
        }
        self.validate()
    }
}

impl LossSpec {
    /// Applies `loss`, `weighting`, `probes`, `hk_order`, `hk_tau` and
    /// `hk_method` from `kv`.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        if let Some(v) = kv.get("loss") {
            let kind: LossKind = v.parse()?;
            *self = LossSpec { heat_kernel: self.heat_kernel, hutchinson_probes: self.hutchinson_probes, ..LossSpec::new(kind) };
        }
        for (k, v) in kv.iter() {
            match k {
                "weighting" => self.weighting = v.parse()?,
                "probes" => self.hutchinson_probes = parse_value(k, v)?,
                "hk_order" => self.heat_kernel.order = Some(parse_value(k, v)?),
                "hk_tau" => self.heat_kernel.tau = parse_value(k, v)?,
                "hk_method" => self.heat_kernel.method = v.parse()?,
                _ => {}
            }
        }
        self.heat_kernel.validate()
    }
}

/// Initial parameters for `seed`.
pub fn init_params(net: &NetworkSpec, seed: u64) -> ParamVector {
    ParamVector::init(net, &mut crate::stream_rng(seed, u64::MAX))
}

/// Draws a training example from `x0`: a uniform time in `[ε, T]`, the
/// forward walk to it and whatever the loss needs on top.
pub fn draw_sample<R: Rng + ?Sized>(x0: &[f64], process: &NoisingProcess, loss: &LossSpec, steps: usize, rng: &mut R) -> Result<Sample> {
    let sch = &process.schedule;
    let t = rng.gen_range(sch.eps..=sch.horizon);
    let mut sample = if loss.kind == LossKind::DsmVaradhanSegmented {
        let s = loss.segment_start(process, t);
        let xs = forward_sample(process, x0, s, steps, rng)?;
        let path = grw_path(&process.manifold, &xs, |r, x| process.drift(s + r, x), |r| process.diffusion(s + r), t - s, steps, rng)?;
        let xt = path.end().to_vec();
        Sample { xs: Some((s, xs)), ..Sample::new(x0.to_vec(), t, xt) }
    } else {
        Sample::new(x0.to_vec(), t, forward_sample(process, x0, t, steps, rng)?)
    };
    if loss.kind == LossKind::IsmHutchinson {
        let basis = process.manifold.tangent_basis(&sample.xt);
        sample.probes = (0..loss.hutchinson_probes).map(|_| draw_probe(&basis, Probe::Rademacher, rng)).collect();
    }
    Ok(sample)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub params: ParamVector,
    /// Batch loss per iteration.
    pub trace: Vec<f64>,
    /// Items dropped over the run because their target was undefined.
    pub dropped: usize,
}

/// Runs `cfg.iters` Adam steps from `init` on minibatches drawn with
/// replacement from `data`. Item `i` of iteration `k` uses stream
/// `(k << 32) | i` of `cfg.seed`, so runs are reproducible bit for bit
/// at any thread count.
pub fn train(
    data: &[Vec<f64>],
    process: &NoisingProcess,
    net: &NetworkSpec,
    init: ParamVector,
    loss: &LossSpec,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutput> {
    cfg.validate()?;
    loss.validate(process)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training data is empty".into()));
    }
    if net.manifold != process.manifold {
        return Err(Error::InvalidArgument(format!("network is for {} but the process runs on {}", net.manifold, process.manifold)));
    }
    if init.len() != net.num_params() {
        return Err(Error::DimensionMismatch { expected: net.num_params(), got: init.len() });
    }
    let mut params = init;
    let mut adam = Adam::new(params.len(), cfg.beta1, cfg.beta2);
    let mut trace = Vec::with_capacity(cfg.iters);
    let mut dropped = 0;
    for k in 0..cfg.iters {
        let batch = (0..cfg.batch_size)
            .into_par_iter()
            .map(|i| {
                let mut rng = crate::stream_rng(cfg.seed, ((k as u64) << 32) | i as u64);
                let x0 = &data[rng.gen_range(0..data.len())];
                draw_sample(x0, process, loss, cfg.forward_steps, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let bl = batch_loss(&params, net, loss, process, &batch)?;
        if !bl.value.is_finite() || bl.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("loss at iteration {k}")));
        }
        dropped += bl.dropped;
        adam.step(&mut params.data, &bl.grad, cfg.learning_rate_at(k))?;
        if !params.is_finite() {
            return Err(Error::NonFinite(format!("parameters after iteration {k}")));
        }
        trace.push(bl.value);
        progress(k, bl.value);
    }
    Ok(TrainOutput { params, trace, dropped })
}

/// Writes `iteration loss` lines.
pub fn write_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let text: String = trace.iter().enumerate().map(|(i, v)| format!("{i} {v:?}\n")).collect();
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = || Error::MalformedRow { line: i + 1, reason: format!("expected 'iteration loss', got '{l}'") };
            let mut f = l.split_whitespace();
            let (_, v) = (f.next().ok_or_else(bad)?, f.next().ok_or_else(bad)?);
            v.parse().map_err(|_| bad())
        })
        .collect()
}

#[cfg(test)]
mod tests;
