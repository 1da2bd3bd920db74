//! The score network `s_θ(t, x) = Σ_i c_i(t, x) E_i(x)`.
//!
//! An MLP with sinusoidal activations maps time features and point
//! coordinates to frame coefficients `c`; the frame of the configured
//! [`FrameScheme`] turns them into a tangent vector. Parameter gradients
//! come from the reverse-mode [`Tape`]; input derivatives are propagated
//! forward, either directly ([`ScoreNet`]) or as tape nodes so that losses
//! involving divergences stay differentiable.

mod checkpoint;
mod tape;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};
use crate::manifold::{FrameScheme, Manifold};
use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};
use std::f64::consts::PI;

/// Scalar time `t/T` plus `sin`/`cos(2^k π t/T)` for `k = 0..4`.
pub const TIME_FEATURES: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetworkSpec {
    pub manifold: Manifold,
    pub scheme: FrameScheme,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Time horizon `T` used to scale the time features.
    pub horizon: f64,
}

impl NetworkSpec {
    /// Default architecture: 3 hidden layers of width 512.
    pub fn new(manifold: Manifold, scheme: FrameScheme) -> Result<Self> {
        let spec = NetworkSpec { manifold, scheme, hidden_layers: 3, hidden_width: 512, horizon: 1.0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_hidden(mut self, layers: usize, width: usize) -> Result<Self> {
        self.hidden_layers = layers;
        self.hidden_width = width;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(Error::InvalidArgument("network needs at least one hidden layer of positive width".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument("time horizon must be positive".into()));
        }
        self.manifold.frame_size(self.scheme)?;
        Ok(())
    }

    /// Number of coordinate features; tori use a `(cos θ, sin θ)` pair per angle.
    pub fn coord_features(&self) -> usize {
        match self.manifold {
            Manifold::Torus(d) => 2 * d,
            m => m.ambient_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        TIME_FEATURES + self.coord_features()
    }

    pub fn output_dim(&self) -> usize {
        self.manifold.frame_size(self.scheme).expect("validated scheme")
    }

    /// `(rows, cols)` of each weight matrix, input layer first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_dim();
        for _ in 0..self.hidden_layers {
            shapes.push((self.hidden_width, fan_in));
            fan_in = self.hidden_width;
        }
        shapes.push((self.output_dim(), fan_in));
        shapes
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * (c + 1)).sum()
    }

    /// SHA-256 of a canonical description of the architecture.
    pub fn hash(&self) -> [u8; 32] {
        let desc = format!(
            "manifold={};scheme={};layers={};width={};horizon={:016x}",
            self.manifold,
            self.scheme,
            self.hidden_layers,
            self.hidden_width,
            self.horizon.to_bits()
        );
        Sha256::digest(desc.as_bytes()).into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Network input for `(t, x)`.
    pub fn features(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let s = t / self.horizon;
        let mut f = Vec::with_capacity(self.input_dim());
        f.push(s);
        for k in 0..4 {
            let a = (1u32 << k) as f64 * PI * s;
            f.push(a.sin());
            f.push(a.cos());
        }
        match self.manifold {
            Manifold::Torus(_) => {
                for a in x {
                    f.push(a.cos());
                    f.push(a.sin());
                }
            }
            _ => f.extend_from_slice(x),
        }
        f
    }

    /// Derivative of [`NetworkSpec::features`] in `x` along `v`.
    pub fn feature_tangent(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; TIME_FEATURES];
        match self.manifold {
            Manifold::Torus(_) => {
                for (a, va) in x.iter().zip(v) {
                    f.push(-a.sin() * va);
                    f.push(a.cos() * va);
                }
            }
            _ => f.extend_from_slice(v),
        }
        f
    }
}

/// Location of one layer inside a [`ParamVector`]: a row-major
/// `rows × cols` weight block followed by `rows` biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSlice {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl LayerSlice {
    pub fn bias_offset(&self) -> usize {
        self.offset + self.rows * self.cols
    }

    pub fn end(&self) -> usize {
        self.bias_offset() + self.rows
    }
}

/// All weights and biases as one flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub data: Vec<f64>,
    pub layout: Vec<LayerSlice>,
}

impl ParamVector {
    pub fn layout_for(spec: &NetworkSpec) -> Vec<LayerSlice> {
        let mut offset = 0;
        spec.layer_shapes()
            .into_iter()
            .map(|(rows, cols)| {
                let l = LayerSlice { offset, rows, cols };
                offset = l.end();
                l
            })
            .collect()
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        ParamVector { data: vec![0.0; spec.num_params()], layout: Self::layout_for(spec) }
    }

    pub fn from_data(spec: &NetworkSpec, data: Vec<f64>) -> Result<Self> {
        let p = Self::zeros(spec);
        if data.len() != p.data.len() {
            return Err(Error::DimensionMismatch { expected: p.data.len(), got: data.len() });
        }
        Ok(ParamVector { data, ..p })
    }

    /// Training initialisation: hidden layers uniform in `±√(6/fan_in)`,
    /// output layer zero so the initial score vanishes.
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Self {
        let mut p = Self::zeros(spec);
        let hidden = p.layout.len() - 1;
        for l in &p.layout[..hidden] {
            let a = (6.0 / l.cols as f64).sqrt();
            for w in &mut p.data[l.offset..l.end()] {
                *w = rng.gen_range(-a..a);
            }
        }
        p
    }

    /// Every layer, output included, drawn as `N(0, scale²/fan_in)`.
    pub fn random<R: Rng + ?Sized>(spec: &NetworkSpec, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(spec);
        for l in p.layout.clone() {
            let s = scale / (l.cols as f64).sqrt();
            for w in &mut p.data[l.offset..l.end()] {
                *w = s * rng.sample::<f64, _>(StandardNormal);
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let l = self.layout[layer];
        &self.data[l.offset..l.bias_offset()]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let l = self.layout[layer];
        &self.data[l.bias_offset()..l.end()]
    }

    /// `W x` for one layer.
    pub fn matvec(&self, layer: usize, x: &[f64]) -> Vec<f64> {
        let l = self.layout[layer];
        assert_eq!(x.len(), l.cols, "layer {layer} input width");
        self.weights(layer).chunks(l.cols).map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum()).collect()
    }

    /// `Wᵀ y` for one layer.
    pub fn matvec_t(&self, layer: usize, y: &[f64]) -> Vec<f64> {
        let l = self.layout[layer];
        let mut out = vec![0.0; l.cols];
        for (row, yr) in self.weights(layer).chunks(l.cols).zip(y) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += yr * w;
            }
        }
        out
    }
}

/// A time-dependent tangent vector field with first derivatives.
pub trait ScoreField: Sync {
    fn manifold(&self) -> Manifold;

    /// Ambient representation of the field at `(t, x)`.
    fn score(&self, t: f64, x: &[f64]) -> Result<Vec<f64>>;

    /// Derivative of the ambient representation along a curve through `x`
    /// with velocity `v`.
    fn jvp(&self, t: f64, x: &[f64], v: &[f64]) -> Result<Vec<f64>>;

    /// Riemannian divergence `Σ_i ⟨e_i, ∇_{e_i} s⟩` over an orthonormal basis.
    fn divergence(&self, t: f64, x: &[f64]) -> Result<f64> {
        let m = self.manifold();
        let mut div = 0.0;
        for e in m.tangent_basis(x) {
            div += m.inner(x, &e, &self.jvp(t, x, &e)?);
        }
        Ok(div)
    }
}

/// The zero field.
#[derive(Clone, Copy, Debug)]
pub struct ZeroField(pub Manifold);

impl ScoreField for ZeroField {
    fn manifold(&self) -> Manifold {
        self.0
    }
    fn score(&self, _t: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; x.len()])
    }
    fn jvp(&self, _t: f64, x: &[f64], _v: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; x.len()])
    }
    fn divergence(&self, _t: f64, _x: &[f64]) -> Result<f64> {
        Ok(0.0)
    }
}

type FieldFn = Box<dyn Fn(f64, &[f64]) -> Result<Vec<f64>> + Send + Sync>;
type JvpFn = Box<dyn Fn(f64, &[f64], &[f64]) -> Result<Vec<f64>> + Send + Sync>;

/// A field given by closures. Without an explicit JVP, derivatives are
/// central differences along geodesics with step `1e-5`.
pub struct FnField {
    manifold: Manifold,
    field: FieldFn,
    jvp: Option<JvpFn>,
}

impl FnField {
    pub fn new(manifold: Manifold, field: impl Fn(f64, &[f64]) -> Result<Vec<f64>> + Send + Sync + 'static) -> Self {
        FnField { manifold, field: Box::new(field), jvp: None }
    }

    pub fn with_jvp(mut self, jvp: impl Fn(f64, &[f64], &[f64]) -> Result<Vec<f64>> + Send + Sync + 'static) -> Self {
        self.jvp = Some(Box::new(jvp));
        self
    }
}

impl ScoreField for FnField {
    fn manifold(&self) -> Manifold {
        self.manifold
    }

    fn score(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        (self.field)(t, x)
    }

    fn jvp(&self, t: f64, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        if let Some(j) = &self.jvp {
            return j(t, x, v);
        }
        let h = 1e-5;
        let m = self.manifold;
        let step = |s: f64| m.exp_unchecked(x, &v.iter().map(|c| c * s).collect::<Vec<_>>());
        let (a, b) = ((self.field)(t, &step(h))?, (self.field)(t, &step(-h))?);
        Ok(a.iter().zip(&b).map(|(p, q)| (p - q) / (2.0 * h)).collect())
    }
}

/// Probe distribution for stochastic divergence estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Probe {
    Rademacher,
    Gaussian,
}

/// Random tangent vector `Σ z_i e_i` in an orthonormal basis.
pub fn draw_probe<R: Rng + ?Sized>(basis: &[Vec<f64>], probe: Probe, rng: &mut R) -> Vec<f64> {
    let mut eps = vec![0.0; basis.first().map_or(0, |b| b.len())];
    for e in basis {
        let z: f64 = match probe {
            Probe::Rademacher => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Probe::Gaussian => rng.sample(StandardNormal),
        };
        crate::util::axpy(&mut eps, z, e);
    }
    eps
}

/// `(1/K) Σ_k ⟨ε_k, ∇_{ε_k} s⟩` with `K` independent probes.
pub fn divergence_hutchinson<F: ScoreField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    t: f64,
    x: &[f64],
    probes: usize,
    probe: Probe,
    rng: &mut R,
) -> Result<f64> {
    if probes == 0 {
        return Err(Error::InvalidArgument("at least one probe is required".into()));
    }
    let m = field.manifold();
    let basis = m.tangent_basis(x);
    let mut acc = 0.0;
    for _ in 0..probes {
        let eps = draw_probe(&basis, probe, rng);
        acc += m.inner(x, &eps, &field.jvp(t, x, &eps)?);
    }
    Ok(acc / probes as f64)
}

/// A network together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreNet {
    pub spec: NetworkSpec,
    pub params: ParamVector,
}

impl ScoreNet {
    pub fn new(spec: NetworkSpec, params: ParamVector) -> Result<Self> {
        if params.len() != spec.num_params() || params.layout != ParamVector::layout_for(&spec) {
            return Err(Error::DimensionMismatch { expected: spec.num_params(), got: params.len() });
        }
        Ok(ScoreNet { spec, params })
    }

    pub fn zeros(spec: NetworkSpec) -> Self {
        ScoreNet { params: ParamVector::zeros(&spec), spec }
    }

    /// MLP coefficients at `feat` and their derivatives along each of
    /// the feature tangents.
    pub fn coefficients(&self, feat: &[f64], tangents: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let p = &self.params;
        let last = p.layout.len() - 1;
        let mut h = feat.to_vec();
        let mut dh: Vec<Vec<f64>> = tangents.to_vec();
        for layer in 0..last {
            let mut z = p.matvec(layer, &h);
            for (zi, b) in z.iter_mut().zip(p.bias(layer)) {
                *zi += b;
            }
            for d in dh.iter_mut() {
                let dz = p.matvec(layer, d);
                *d = dz.iter().zip(&z).map(|(a, zi)| a * zi.cos()).collect();
            }
            h = z.iter().map(|v| v.sin()).collect();
        }
        let mut c = p.matvec(last, &h);
        for (ci, b) in c.iter_mut().zip(p.bias(last)) {
            *ci += b;
        }
        let dc = dh.iter().map(|d| p.matvec(last, d)).collect();
        (c, dc)
    }

    fn check_input(&self, t: f64, x: &[f64]) -> Result<()> {
        let m = self.spec.manifold;
        if x.len() != m.ambient_dim() {
            return Err(Error::DimensionMismatch { expected: m.ambient_dim(), got: x.len() });
        }
        if !t.is_finite() {
            return Err(Error::InvalidArgument(format!("time must be finite, got {t}")));
        }
        Ok(())
    }

    /// Ambient score and its derivative along each direction in `dirs`.
    pub fn score_with_jvps(&self, t: f64, x: &[f64], dirs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        self.check_input(t, x)?;
        let (m, scheme) = (self.spec.manifold, self.spec.scheme);
        let feat = self.spec.features(t, x);
        let tangents: Vec<Vec<f64>> = dirs.iter().map(|v| self.spec.feature_tangent(x, v)).collect();
        let (c, dc) = self.coefficients(&feat, &tangents);
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("network output at t = {t}")));
        }
        let frame = m.frame(x, scheme)?;
        let s = frame.combine(&c);
        let mut jvps = Vec::with_capacity(dirs.len());
        for (v, dci) in dirs.iter().zip(&dc) {
            let mut j = frame.combine(dci);
            let df = m.frame_derivative(x, scheme, v)?;
            crate::util::axpy(&mut j, 1.0, &df.combine(&c));
            jvps.push(j);
        }
        Ok((s, jvps))
    }

    /// Exact divergence with one forward pass carrying all basis tangents.
    pub fn divergence_exact(&self, t: f64, x: &[f64]) -> Result<f64> {
        let m = self.spec.manifold;
        let basis = m.tangent_basis(x);
        let (_, jvps) = self.score_with_jvps(t, x, &basis)?;
        Ok(basis.iter().zip(&jvps).map(|(e, j)| m.inner(x, e, j)).sum())
    }
}

impl ScoreField for ScoreNet {
    fn manifold(&self) -> Manifold {
        self.spec.manifold
    }

    fn score(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.score_with_jvps(t, x, &[])?.0)
    }

    fn jvp(&self, t: f64, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.score_with_jvps(t, x, std::slice::from_ref(&v.to_vec()))?.1.remove(0))
    }

    fn divergence(&self, t: f64, x: &[f64]) -> Result<f64> {
        self.divergence_exact(t, x)
    }
}

/// Nodes produced by [`record_mlp`].
pub struct RecordedMlp {
    pub coeffs: Var,
    pub tangents: Vec<Var>,
}

/// Records the MLP on a tape from a feature node and feature-tangent nodes.
pub fn record_mlp(tape: &mut Tape, layers: usize, feat: Var, tangents: &[Var]) -> RecordedMlp {
    let last = layers - 1;
    let mut h = feat;
    let mut dh = tangents.to_vec();
    for layer in 0..last {
        let z = tape.affine(layer, h);
        if !dh.is_empty() {
            let cz = tape.cos(z);
            for d in dh.iter_mut() {
                let dz = tape.linear(layer, *d);
                *d = tape.mul(cz, dz);
            }
        }
        h = tape.sin(z);
    }
    let coeffs = tape.affine(last, h);
    let tangents = dh.into_iter().map(|d| tape.linear(last, d)).collect();
    RecordedMlp { coeffs, tangents }
}

/// Nodes produced by [`record_score`].
pub struct RecordedScore {
    pub coeffs: Var,
    /// Ambient score.
    pub score: Var,
    /// Ambient derivative along each requested direction.
    pub jvps: Vec<Var>,
}

/// Records `s_θ(t, x)` and its derivatives along `dirs` on a tape.
pub fn record_score(spec: &NetworkSpec, tape: &mut Tape, t: f64, x: &[f64], dirs: &[Vec<f64>]) -> Result<RecordedScore> {
    let (m, scheme) = (spec.manifold, spec.scheme);
    let feat = tape.leaf(spec.features(t, x));
    let tangents: Vec<Var> = dirs.iter().map(|v| tape.leaf(spec.feature_tangent(x, v))).collect();
    let mlp = record_mlp(tape, spec.hidden_layers + 1, feat, &tangents);
    let frame = m.frame(x, scheme)?;
    let score = tape.matvec(&frame.data, mlp.coeffs);
    let mut jvps = Vec::with_capacity(dirs.len());
    for (v, dc) in dirs.iter().zip(&mlp.tangents) {
        let a = tape.matvec(&frame.data, *dc);
        let df = m.frame_derivative(x, scheme, v)?;
        let b = tape.matvec(&df.data, mlp.coeffs);
        jvps.push(tape.add(a, b));
    }
    Ok(RecordedScore { coeffs: mlp.coeffs, score, jvps })
}

/// Value and exact parameter gradient of a scalar built on a tape.
pub fn loss_grad<F>(params: &ParamVector, build: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new(params);
    let out = build(&mut tape)?;
    if tape.value(out).len() != 1 {
        return Err(Error::InvalidArgument("loss must be a scalar node".into()));
    }
    let value = tape.scalar(out);
    if !value.is_finite() {
        return Err(Error::NonFinite("loss value".into()));
    }
    Ok((value, tape.backward(out).params))
}

#[cfg(test)]
mod tests;
