//! Closed-form Riemannian geometry on the manifolds supported by the toolkit.
//!
//! Points and tangent vectors are stored in ambient coordinates as plain
//! `f64` slices:
//!
//! | manifold          | ambient layout                          | metric                       |
//! |-------------------|-----------------------------------------|------------------------------|
//! | `Euclidean(d)`    | `d` coordinates                         | Euclidean                    |
//! | `Sphere(d)`       | unit vector in `R^{d+1}`                | induced Euclidean            |
//! | `Torus(d)`        | `d` angles in `[0, 2π)`                 | flat, unit speed per angle   |
//! | `SpecialOrthogonal` | row-major 3×3 rotation matrix         | `½ tr(UᵀV)` (bi-invariant)   |
//! | `Hyperbolic(d)`   | hyperboloid `⟨x,x⟩_L = -1`, `x₀ > 0`     | Minkowski, restricted        |
//!
//! With the SO(3) metric above the geodesic distance between two rotations
//! equals their relative rotation angle and `{Q E_ij}` is orthonormal.

mod euclidean;
mod hyperbolic;
mod so3;
mod sphere;
mod torus;

pub use so3::{hat, rodrigues, vee};

use crate::error::{Error, Result};
use crate::util::{dot, norm, TAU};
use rand::Rng;
use std::f64::consts::PI;
use std::fmt;

/// Tolerance used when validating points and tangent vectors.
pub const POINT_TOL: f64 = 1e-9;
/// Projection residual above which a vector is rejected as non-tangent.
pub const TANGENT_TOL: f64 = 1e-6;

/// A manifold supported by the toolkit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Manifold {
    Euclidean(usize),
    Sphere(usize),
    Torus(usize),
    /// The rotation group SO(3).
    SpecialOrthogonal,
    /// Hyperboloid model of hyperbolic space.
    Hyperbolic(usize),
}

impl fmt::Display for Manifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Manifold::Euclidean(d) => write!(f, "Euclidean({d})"),
            Manifold::Sphere(d) => write!(f, "Sphere({d})"),
            Manifold::Torus(d) => write!(f, "Torus({d})"),
            Manifold::SpecialOrthogonal => write!(f, "SpecialOrthogonal(3)"),
            Manifold::Hyperbolic(d) => write!(f, "Hyperbolic({d})"),
        }
    }
}

impl std::str::FromStr for Manifold {
    type Err = Error;

    /// Parses `sphere(2)`, `S2`, `torus(3)`, `T2`, `so3`, `hyperbolic(2)`, `H2`, `euclidean(2)`, `R2`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase().replace(' ', "");
        let bad = || Error::InvalidArgument(format!("unknown manifold '{s}'"));
        let arg = |prefix: &str| -> Option<usize> {
            let rest = t.strip_prefix(prefix)?;
            let rest = rest.strip_prefix('(').and_then(|r| r.strip_suffix(')')).unwrap_or(rest);
            rest.parse().ok()
        };
        if t == "so3" || t == "so(3)" || t == "specialorthogonal(3)" || t == "specialorthogonal" {
            return Ok(Manifold::SpecialOrthogonal);
        }
        let m = if let Some(d) = arg("sphere").or_else(|| arg("s")) {
            Manifold::Sphere(d)
        } else if let Some(d) = arg("torus").or_else(|| arg("t")) {
            Manifold::Torus(d)
        } else if let Some(d) = arg("hyperbolic").or_else(|| arg("h")) {
            Manifold::Hyperbolic(d)
        } else if let Some(d) = arg("euclidean").or_else(|| arg("r")) {
            Manifold::Euclidean(d)
        } else {
            return Err(bad());
        };
        if m.dim() == 0 {
            return Err(Error::InvalidArgument("intrinsic dimension must be at least 1".into()));
        }
        Ok(m)
    }
}

/// How a score network's coefficients are turned into a tangent vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FrameScheme {
    /// Ambient basis vectors projected onto the tangent space (`n = p`).
    Projected,
    /// Left-invariant (divergence-free) fields of a Lie group.
    LieFrame,
    /// Coordinate vector fields of a global chart.
    Coordinates,
}

impl fmt::Display for FrameScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FrameScheme::Projected => "projected",
            FrameScheme::LieFrame => "lie",
            FrameScheme::Coordinates => "coordinates",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for FrameScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "projected" => Ok(FrameScheme::Projected),
            "lie" | "lieframe" | "divfree" => Ok(FrameScheme::LieFrame),
            "coordinates" | "coords" => Ok(FrameScheme::Coordinates),
            _ => Err(Error::InvalidArgument(format!("unknown frame scheme '{s}'"))),
        }
    }
}

/// A spanning family of tangent vectors at a point, stored as a row-major
/// `ambient_dim × n` matrix whose columns are the fields.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub ambient_dim: usize,
    pub n: usize,
    pub data: Vec<f64>,
}

impl Frame {
    fn zeros(ambient_dim: usize, n: usize) -> Self {
        Frame { ambient_dim, n, data: vec![0.0; ambient_dim * n] }
    }

    fn from_columns(ambient_dim: usize, cols: &[Vec<f64>]) -> Self {
        let n = cols.len();
        let mut f = Frame::zeros(ambient_dim, n);
        for (j, c) in cols.iter().enumerate() {
            for (i, v) in c.iter().take(ambient_dim).enumerate() {
                f.data[i * n + j] = *v;
            }
        }
        f
    }

    pub fn field(&self, j: usize) -> Vec<f64> {
        (0..self.ambient_dim).map(|i| self.data[i * self.n + j]).collect()
    }

    /// `Σ_j coeffs[j] E_j`.
    pub fn combine(&self, coeffs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(coeffs.len(), self.n);
        (0..self.ambient_dim).map(|i| dot(&self.data[i * self.n..(i + 1) * self.n], coeffs)).collect()
    }

    /// Singular values of the frame matrix, largest first.
    pub fn singular_values(&self) -> Vec<f64> {
        let m = nalgebra::DMatrix::from_row_slice(self.ambient_dim, self.n, &self.data);
        let mut s: Vec<f64> = m.singular_values().iter().cloned().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        s
    }
}

/// A validated point on a manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldPoint {
    pub manifold: Manifold,
    pub coords: Vec<f64>,
}

impl ManifoldPoint {
    pub fn new(manifold: Manifold, coords: Vec<f64>) -> Result<Self> {
        manifold.check_point(&coords)?;
        Ok(ManifoldPoint { manifold, coords })
    }
}

/// A validated tangent vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    pub base: ManifoldPoint,
    pub vec: Vec<f64>,
}

impl TangentVector {
    pub fn new(base: ManifoldPoint, vec: Vec<f64>) -> Result<Self> {
        base.manifold.check_tangent(&base.coords, &vec)?;
        Ok(TangentVector { base, vec })
    }
}

impl Manifold {
    /// Intrinsic dimension `d`.
    pub fn dim(&self) -> usize {
        match *self {
            Manifold::Euclidean(d) | Manifold::Sphere(d) | Manifold::Torus(d) | Manifold::Hyperbolic(d) => d,
            Manifold::SpecialOrthogonal => 3,
        }
    }

    /// Number of stored coordinates `p`.
    pub fn ambient_dim(&self) -> usize {
        match *self {
            Manifold::Euclidean(d) | Manifold::Torus(d) => d,
            Manifold::Sphere(d) | Manifold::Hyperbolic(d) => d + 1,
            Manifold::SpecialOrthogonal => 9,
        }
    }

    pub fn is_compact(&self) -> bool {
        matches!(self, Manifold::Sphere(_) | Manifold::Torus(_) | Manifold::SpecialOrthogonal)
    }

    /// Injectivity radius of the exponential map.
    pub fn injectivity_radius(&self) -> f64 {
        match self {
            Manifold::Sphere(_) | Manifold::Torus(_) | Manifold::SpecialOrthogonal => PI,
            Manifold::Euclidean(_) | Manifold::Hyperbolic(_) => f64::INFINITY,
        }
    }

    /// Riemannian volume `|M|` of a compact manifold.
    pub fn volume(&self) -> Result<f64> {
        match *self {
            Manifold::Sphere(d) => {
                let k = (d + 1) as f64 / 2.0;
                Ok(2.0 * PI.powf(k) / statrs::function::gamma::gamma(k))
            }
            Manifold::Torus(d) => Ok(TAU.powi(d as i32)),
            Manifold::SpecialOrthogonal => Ok(8.0 * PI * PI),
            _ => Err(Error::NonCompact(self.to_string())),
        }
    }

    /// `log |M|`, the offset converting densities w.r.t. the uniform
    /// probability measure into densities w.r.t. the volume measure.
    pub fn log_volume(&self) -> Result<f64> {
        self.volume().map(f64::ln)
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        let p = self.ambient_dim();
        if v.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: v.len() });
        }
        Ok(())
    }

    /// Validates the point invariants at tolerance [`POINT_TOL`].
    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        self.check_len(x)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPoint("non-finite coordinate".into()));
        }
        match self {
            Manifold::Euclidean(_) => Ok(()),
            Manifold::Sphere(_) => {
                let r = (norm(x) - 1.0).abs();
                if r > POINT_TOL {
                    return Err(Error::InvalidPoint(format!("|x| - 1 = {r:.3e}")));
                }
                Ok(())
            }
            Manifold::Torus(_) => {
                if x.iter().any(|a| !(0.0..TAU).contains(a)) {
                    return Err(Error::InvalidPoint("angle outside [0, 2π)".into()));
                }
                Ok(())
            }
            Manifold::SpecialOrthogonal => so3::check_point(x),
            Manifold::Hyperbolic(_) => {
                let m = hyperbolic::minkowski(x, x);
                if (m + 1.0).abs() > POINT_TOL || x[0] <= 0.0 {
                    return Err(Error::InvalidPoint(format!("<x,x>_L + 1 = {:.3e}", m + 1.0)));
                }
                Ok(())
            }
        }
    }

    /// Validates that `v` is tangent at `x` within [`TANGENT_TOL`].
    pub fn check_tangent(&self, x: &[f64], v: &[f64]) -> Result<()> {
        self.check_len(x)?;
        self.check_len(v)?;
        let p = self.project(x, v);
        let residual = norm(&crate::util::sub(v, &p));
        if residual > TANGENT_TOL * (1.0 + norm(v)) {
            return Err(Error::NotTangent { residual });
        }
        Ok(())
    }

    /// Riemannian inner product of two tangent vectors at `x`.
    pub fn inner(&self, _x: &[f64], u: &[f64], v: &[f64]) -> f64 {
        match self {
            Manifold::SpecialOrthogonal => 0.5 * dot(u, v),
            Manifold::Hyperbolic(_) => hyperbolic::minkowski(u, v),
            _ => dot(u, v),
        }
    }

    pub fn norm(&self, x: &[f64], v: &[f64]) -> f64 {
        self.inner(x, v, v).max(0.0).sqrt()
    }

    /// Diagonal weights `w` such that `inner(u, v) = Σ w_i u_i v_i`.
    pub fn metric_weights(&self) -> Vec<f64> {
        let p = self.ambient_dim();
        match self {
            Manifold::SpecialOrthogonal => vec![0.5; p],
            Manifold::Hyperbolic(_) => {
                let mut w = vec![1.0; p];
                w[0] = -1.0;
                w
            }
            _ => vec![1.0; p],
        }
    }

    /// Riemannian exponential map `exp_x(v)`.
    pub fn exp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_tangent(x, v)?;
        Ok(self.exp_unchecked(x, v))
    }

    /// Exponential map without the tangency check; `v` is projected first.
    pub fn exp_unchecked(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        match self {
            Manifold::Euclidean(_) => euclidean::exp(x, v),
            Manifold::Sphere(_) => sphere::exp(x, &self.project(x, v)),
            Manifold::Torus(_) => torus::exp(x, v),
            Manifold::SpecialOrthogonal => so3::exp(x, v),
            Manifold::Hyperbolic(_) => hyperbolic::exp(x, &self.project(x, v)),
        }
    }

    /// Riemannian logarithm `exp_x^{-1}(y)`.
    pub fn log(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        self.check_len(y)?;
        match self {
            Manifold::Euclidean(_) => Ok(euclidean::log(x, y)),
            Manifold::Sphere(_) => sphere::log(x, y),
            Manifold::Torus(_) => Ok(torus::log(x, y)),
            Manifold::SpecialOrthogonal => so3::log(x, y),
            Manifold::Hyperbolic(_) => Ok(hyperbolic::log(x, y)),
        }
    }

    /// Parallel transport of `v ∈ T_x M` to `T_y M` along the minimising geodesic.
    pub fn transport(&self, x: &[f64], y: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y)?;
        self.check_tangent(x, v)?;
        match self {
            Manifold::Euclidean(_) | Manifold::Torus(_) => Ok(v.to_vec()),
            Manifold::Sphere(_) => sphere::transport(x, y, v),
            Manifold::SpecialOrthogonal => so3::transport(x, y, v),
            Manifold::Hyperbolic(_) => Ok(hyperbolic::transport(x, y, v)),
        }
    }

    /// Geodesic distance.
    pub fn dist(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        self.check_len(y)?;
        Ok(match self {
            Manifold::Euclidean(_) => norm(&crate::util::sub(x, y)),
            Manifold::Sphere(_) => sphere::dist(x, y),
            Manifold::Torus(_) => norm(&torus::log(x, y)),
            Manifold::SpecialOrthogonal => so3::rotation_angle(&so3::relative(x, y)),
            Manifold::Hyperbolic(_) => hyperbolic::dist(x, y),
        })
    }

    /// Orthogonal projection of an ambient vector onto `T_x M`.
    pub fn project(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        match self {
            Manifold::Euclidean(_) | Manifold::Torus(_) => w.to_vec(),
            Manifold::Sphere(_) => sphere::project(x, w),
            Manifold::SpecialOrthogonal => so3::project(x, w),
            Manifold::Hyperbolic(_) => hyperbolic::project(x, w),
        }
    }

    /// Closest-point retraction of an ambient point back onto the manifold.
    pub fn project_point(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Manifold::Euclidean(_) => x.to_vec(),
            Manifold::Sphere(_) => {
                let n = norm(x);
                x.iter().map(|v| v / n).collect()
            }
            Manifold::Torus(_) => x.iter().map(|&a| crate::util::wrap_angle(a)).collect(),
            Manifold::SpecialOrthogonal => so3::polar(x),
            Manifold::Hyperbolic(_) => hyperbolic::lift(x),
        }
    }

    /// Draws a point from the uniform (normalised volume) distribution.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Manifold::Sphere(d) => Ok(sphere::sample_uniform(*d, rng)),
            Manifold::Torus(d) => Ok((0..*d).map(|_| rng.gen::<f64>() * TAU).map(crate::util::wrap_angle).collect()),
            Manifold::SpecialOrthogonal => Ok(so3::sample_uniform(rng)),
            _ => Err(Error::NonCompact(self.to_string())),
        }
    }

    /// A reference point: north pole, zero angles, identity, hyperboloid apex or origin.
    pub fn origin(&self) -> Vec<f64> {
        let p = self.ambient_dim();
        let mut x = vec![0.0; p];
        match self {
            Manifold::Sphere(_) => x[p - 1] = 1.0,
            Manifold::Hyperbolic(_) => x[0] = 1.0,
            Manifold::SpecialOrthogonal => {
                x[0] = 1.0;
                x[4] = 1.0;
                x[8] = 1.0;
            }
            _ => {}
        }
        x
    }

    /// Orthonormal basis of `T_x M` (`d` vectors).
    ///
    /// Built by Gram–Schmidt on the projected ambient basis; ambient axes are
    /// visited in order of increasing normal component so the choice is
    /// deterministic and well conditioned.
    pub fn tangent_basis(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let p = self.ambient_dim();
        let d = self.dim();
        match self {
            Manifold::Euclidean(_) | Manifold::Torus(_) => (0..p)
                .map(|i| {
                    let mut e = vec![0.0; p];
                    e[i] = 1.0;
                    e
                })
                .collect(),
            Manifold::SpecialOrthogonal => so3::lie_fields(x),
            _ => {
                let mut order: Vec<usize> = (0..p).collect();
                // for the hyperboloid, the time axis is visited last
                let key = |i: usize| match self {
                    Manifold::Hyperbolic(_) if i == 0 => f64::INFINITY,
                    _ => x[i].abs(),
                };
                order.sort_by(|&a, &b| key(a).partial_cmp(&key(b)).unwrap().then(a.cmp(&b)));
                let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
                for i in order {
                    if basis.len() == d {
                        break;
                    }
                    let mut e = vec![0.0; p];
                    e[i] = 1.0;
                    let mut v = self.project(x, &e);
                    for _ in 0..2 {
                        for b in &basis {
                            let c = self.inner(x, &v, b);
                            crate::util::axpy(&mut v, -c, b);
                        }
                    }
                    let n = self.norm(x, &v);
                    if n > 1e-6 {
                        basis.push(v.iter().map(|c| c / n).collect());
                    }
                }
                basis
            }
        }
    }

    /// Number of fields produced by [`Manifold::frame`] for a scheme.
    pub fn frame_size(&self, scheme: FrameScheme) -> Result<usize> {
        self.check_scheme(scheme)?;
        Ok(match (self, scheme) {
            (_, FrameScheme::Projected) => self.ambient_dim(),
            (Manifold::SpecialOrthogonal, _) => 3,
            _ => self.dim(),
        })
    }

    fn check_scheme(&self, scheme: FrameScheme) -> Result<()> {
        let ok = match scheme {
            FrameScheme::Projected => true,
            FrameScheme::LieFrame => matches!(self, Manifold::SpecialOrthogonal | Manifold::Torus(_) | Manifold::Euclidean(_)),
            FrameScheme::Coordinates => matches!(self, Manifold::Torus(_) | Manifold::Hyperbolic(_) | Manifold::Euclidean(_)),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::UnsupportedScheme { scheme: scheme.to_string(), manifold: self.to_string() })
        }
    }

    /// Spanning family of tangent fields evaluated at `x`.
    pub fn frame(&self, x: &[f64], scheme: FrameScheme) -> Result<Frame> {
        self.check_scheme(scheme)?;
        self.check_len(x)?;
        let p = self.ambient_dim();
        let cols: Vec<Vec<f64>> = match (self, scheme) {
            (Manifold::SpecialOrthogonal, FrameScheme::LieFrame) => so3::lie_fields(x),
            (Manifold::Hyperbolic(_), FrameScheme::Coordinates) => hyperbolic::coordinate_fields(x),
            (Manifold::Euclidean(_) | Manifold::Torus(_), _) => self.tangent_basis(x),
            (_, FrameScheme::Projected) => (0..p)
                .map(|i| {
                    let mut e = vec![0.0; p];
                    e[i] = 1.0;
                    self.project(x, &e)
                })
                .collect(),
            _ => unreachable!("scheme checked above"),
        };
        Ok(Frame::from_columns(p, &cols))
    }

    /// Directional derivative of every frame field at `x` along the tangent
    /// vector `v`, as a frame-shaped matrix.
    pub fn frame_derivative(&self, x: &[f64], scheme: FrameScheme, v: &[f64]) -> Result<Frame> {
        self.check_scheme(scheme)?;
        let p = self.ambient_dim();
        let n = self.frame_size(scheme)?;
        let cols: Vec<Vec<f64>> = match (self, scheme) {
            (Manifold::Euclidean(_) | Manifold::Torus(_), _) => return Ok(Frame::zeros(p, n)),
            (Manifold::SpecialOrthogonal, FrameScheme::LieFrame) => so3::lie_fields(v),
            (Manifold::Hyperbolic(_), FrameScheme::Coordinates) => hyperbolic::coordinate_fields_derivative(x, v),
            (Manifold::Sphere(_), FrameScheme::Projected) => (0..p).map(|i| sphere::projection_derivative(x, v, i)).collect(),
            (Manifold::SpecialOrthogonal, FrameScheme::Projected) => (0..p).map(|i| so3::projection_derivative(x, v, i)).collect(),
            (Manifold::Hyperbolic(_), FrameScheme::Projected) => (0..p).map(|i| hyperbolic::projection_derivative(x, v, i)).collect(),
            _ => unreachable!("scheme checked above"),
        };
        Ok(Frame::from_columns(p, &cols))
    }

    /// Expresses a tangent vector in an orthonormal basis.
    pub fn coordinates_in(&self, x: &[f64], basis: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
        basis.iter().map(|b| self.inner(x, b, v)).collect()
    }
}

/// Drift `-½∇U(x) = exp_x^{-1}(μ) / (2γ²)` of the Langevin diffusion whose
/// invariant law is the Riemannian normal with mean `μ` and scale `γ`.
pub fn langevin_drift(m: &Manifold, x: &[f64], mu: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if gamma <= 0.0 {
        return Err(Error::InvalidArgument("gamma must be positive".into()));
    }
    let l = m.log(x, mu)?;
    Ok(crate::util::scale(&l, 1.0 / (2.0 * gamma * gamma)))
}
