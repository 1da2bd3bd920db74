//! A minimal reverse-mode tape over vector-valued nodes.
//!
//! Parameters never appear as nodes: [`Tape::affine`] and [`Tape::linear`]
//! read a layer's weights straight from the parameter vector and the
//! backward pass accumulates into a flat gradient of the same layout.
//! Every op here is differentiable, so any closure built from them has an
//! exact gradient.

use super::ParamVector;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Affine {
        layer: usize,
        x: Var,
    },
    Linear {
        layer: usize,
        x: Var,
    },
    Sin(Var),
    Cos(Var),
    Mul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    /// `Σ w_i a_i b_i`, unit weights when `w` is `None`.
    Dot {
        a: Var,
        b: Var,
        w: Option<Vec<f64>>,
    },
    DotConst {
        x: Var,
        c: Vec<f64>,
    },
    Sum(Var),
    /// Constant row-major `rows × x.len()` matrix times `x`.
    MatVec {
        m: Vec<f64>,
        x: Var,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamVector,
    nodes: Vec<Node>,
}

/// Result of a backward sweep.
pub struct Gradients {
    /// Gradient with respect to every parameter, in layout order.
    pub params: Vec<f64>,
    adjoints: Vec<Vec<f64>>,
}

impl Gradients {
    /// Adjoint of any node, e.g. an input.
    pub fn wrt(&self, v: Var) -> &[f64] {
        &self.adjoints[v.0]
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamVector) -> Self {
        Tape { params, nodes: Vec::with_capacity(64) }
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input or constant leaf.
    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// `W x + b` with the weights of `layer`.
    pub fn affine(&mut self, layer: usize, x: Var) -> Var {
        let mut y = self.params.matvec(layer, self.value(x));
        for (yi, bi) in y.iter_mut().zip(self.params.bias(layer)) {
            *yi += bi;
        }
        self.push(y, Op::Affine { layer, x })
    }

    /// `W x` with the weights of `layer`, no bias.
    pub fn linear(&mut self, layer: usize, x: Var) -> Var {
        let y = self.params.matvec(layer, self.value(x));
        self.push(y, Op::Linear { layer, x })
    }

    pub fn sin(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|v| v.sin()).collect();
        self.push(y, Op::Sin(x))
    }

    pub fn cos(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|v| v.cos()).collect();
        self.push(y, Op::Cos(x))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let y = self.zip(a, b, |p, q| p * q);
        self.push(y, Op::Mul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.zip(a, b, |p, q| p + q);
        self.push(y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let y = self.zip(a, b, |p, q| p - q);
        self.push(y, Op::Sub(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let y = self.value(x).iter().map(|v| v * s).collect();
        self.push(y, Op::Scale(x, s))
    }

    pub fn dot(&mut self, a: Var, b: Var, w: Option<&[f64]>) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "dot of mismatched lengths");
        let y = match w {
            Some(w) => va.iter().zip(vb).zip(w).map(|((p, q), w)| w * p * q).sum(),
            None => va.iter().zip(vb).map(|(p, q)| p * q).sum(),
        };
        self.push(vec![y], Op::Dot { a, b, w: w.map(|w| w.to_vec()) })
    }

    pub fn dot_const(&mut self, x: Var, c: &[f64]) -> Var {
        let y = self.value(x).iter().zip(c).map(|(p, q)| p * q).sum();
        self.push(vec![y], Op::DotConst { x, c: c.to_vec() })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().sum();
        self.push(vec![y], Op::Sum(x))
    }

    /// Constant row-major matrix `m` (with `x.len()` columns) times `x`.
    pub fn matvec(&mut self, m: &[f64], x: Var) -> Var {
        let xv = self.value(x);
        let cols = xv.len();
        assert_eq!(m.len() % cols.max(1), 0, "matrix shape does not match vector");
        let y = m.chunks(cols.max(1)).map(|row| row.iter().zip(xv).map(|(a, b)| a * b).sum()).collect();
        self.push(y, Op::MatVec { m: m.to_vec(), x })
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "elementwise op on mismatched lengths");
        va.iter().zip(vb).map(|(p, q)| f(*p, *q)).collect()
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).len(), 1, "backward needs a scalar output");
        let mut adj: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        let mut g = vec![0.0; self.params.len()];
        adj[out.0][0] = 1.0;
        for i in (0..=out.0).rev() {
            let ybar = std::mem::take(&mut adj[i]);
            if ybar.iter().all(|v| *v == 0.0) {
                adj[i] = ybar;
                continue;
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Affine { layer, x } | Op::Linear { layer, x } => {
                    let xv = &self.nodes[x.0].value;
                    let l = self.params.layout[*layer];
                    for (r, yb) in ybar.iter().enumerate() {
                        let row = &mut g[l.offset + r * l.cols..l.offset + (r + 1) * l.cols];
                        for (gw, xc) in row.iter_mut().zip(xv) {
                            *gw += yb * xc;
                        }
                    }
                    if matches!(node.op, Op::Affine { .. }) {
                        for (gb, yb) in g[l.bias_offset()..l.bias_offset() + l.rows].iter_mut().zip(&ybar) {
                            *gb += yb;
                        }
                    }
                    let xb = self.params.matvec_t(*layer, &ybar);
                    acc(&mut adj[x.0], &xb);
                }
                Op::Sin(x) => {
                    let xv = &self.nodes[x.0].value;
                    for ((a, yb), xv) in adj[x.0].iter_mut().zip(&ybar).zip(xv) {
                        *a += yb * xv.cos();
                    }
                }
                Op::Cos(x) => {
                    let xv = &self.nodes[x.0].value;
                    for ((a, yb), xv) in adj[x.0].iter_mut().zip(&ybar).zip(xv) {
                        *a -= yb * xv.sin();
                    }
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = ybar.iter().zip(&self.nodes[b.0].value).map(|(y, v)| y * v).collect();
                    let db: Vec<f64> = ybar.iter().zip(&self.nodes[a.0].value).map(|(y, v)| y * v).collect();
                    acc(&mut adj[a.0], &da);
                    acc(&mut adj[b.0], &db);
                }
                Op::Add(a, b) => {
                    acc(&mut adj[a.0], &ybar);
                    acc(&mut adj[b.0], &ybar);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj[a.0], &ybar);
                    let neg: Vec<f64> = ybar.iter().map(|v| -v).collect();
                    acc(&mut adj[b.0], &neg);
                }
                Op::Scale(x, s) => {
                    let d: Vec<f64> = ybar.iter().map(|v| v * s).collect();
                    acc(&mut adj[x.0], &d);
                }
                Op::Dot { a, b, w } => {
                    let yb = ybar[0];
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let wi = |k: usize| w.as_ref().map_or(1.0, |w| w[k]);
                    let da: Vec<f64> = (0..va.len()).map(|k| yb * wi(k) * vb[k]).collect();
                    let db: Vec<f64> = (0..va.len()).map(|k| yb * wi(k) * va[k]).collect();
                    acc(&mut adj[a.0], &da);
                    acc(&mut adj[b.0], &db);
                }
                Op::DotConst { x, c } => {
                    let d: Vec<f64> = c.iter().map(|v| v * ybar[0]).collect();
                    acc(&mut adj[x.0], &d);
                }
                Op::Sum(x) => {
                    let yb = ybar[0];
                    adj[x.0].iter_mut().for_each(|a| *a += yb);
                }
                Op::MatVec { m, x } => {
                    let cols = self.nodes[x.0].value.len();
                    let mut d = vec![0.0; cols];
                    for (row, yb) in m.chunks(cols.max(1)).zip(&ybar) {
                        for (dk, mk) in d.iter_mut().zip(row) {
                            *dk += yb * mk;
                        }
                    }
                    acc(&mut adj[x.0], &d);
                }
            }
            adj[i] = ybar;
        }
        Gradients { params: g, adjoints: adj }
    }
}

fn acc(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
