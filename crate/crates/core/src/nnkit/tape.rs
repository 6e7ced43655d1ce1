//! Reverse-mode gradient tape.
//!
//! A [`Tape`] is built fresh for every minibatch: forward operations push
//! nodes holding their value and the operation that produced them, and
//! [`Tape::backprop`] walks the nodes in reverse, accumulating adjoints.
//! Nodes that do not depend on any registered parameter are never visited
//! on the way back, so frozen sub-modules cost nothing beyond their forward
//! pass.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::dist::{BERNOULLI_EPS, LOGVAR_MAX, LOGVAR_MIN};
use super::Tensor;
use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    LeakyRelu,
    Tanh,
    Sigmoid,
}

pub const LEAKY_SLOPE: f64 = 0.01;

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::LeakyRelu => {
                if v > 0.0 {
                    v
                } else {
                    LEAKY_SLOPE * v
                }
            }
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => sigmoid(v),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu => {
                if y > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Act { x: Var, kind: Activation },
    Clamp { x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp { x: Var, c: f64 },
    WeightedSum { parts: Vec<Var>, weights: Vec<f64> },
    Reparam { mu: Var, logvar: Var, eps: Tensor },
    KlStd { mu: Var, logvar: Var },
    GaussLl { x: Tensor, mean: Var, sigma: f64 },
    BernLl { x: Tensor, probs: Var },
    LogNormal { z: Var, mean: Var, logvar: Var },
    LogNormalStd { z: Var, mean: Var, std: Var },
    LogStdNormal { z: Var },
    LogMeanExp { parts: Vec<Var> },
    Mean(Var),
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    map: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn insert(&mut self, name: &str, grad: Tensor) {
        self.map.insert(name.to_string(), grad);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a trainable parameter under `name`; re-registering a name
    /// returns the existing node so repeated uses accumulate into one gradient.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        self.nodes.push(Node {
            value: t.clone(),
            op: Op::Leaf,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(name.to_string(), v);
        v
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, format!("{sa:?}"), format!("{sb:?}")));
        }
        Ok(())
    }

    /// `y = x · wᵀ + b`, `x: [batch, in]`, `w: [out, in]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols() != wv.cols() {
            return Err(Error::dim("affine", format!("input width {}", wv.cols()), xv.cols()));
        }
        if bv.len() != wv.rows() {
            return Err(Error::dim("affine bias", wv.rows(), bv.len()));
        }
        let mut y = xv.matmul_nt(wv)?;
        let out = wv.rows();
        for r in 0..y.rows() {
            for (yv, bb) in y.row_mut(r).iter_mut().zip(bv.data()) {
                *yv += bb;
            }
        }
        debug_assert_eq!(y.cols(), out);
        Ok(self.push(y, Op::Affine { x, w, b }, &[x, w, b]))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        if kind == Activation::Identity {
            return x;
        }
        let y = self.value(x).map(|v| kind.apply(v));
        self.push(y, Op::Act { x, kind }, &[x])
    }

    /// Clamps into the log-variance range; the gradient passes straight through.
    pub fn clamp_logvar(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX));
        self.push(y, Op::Clamp { x }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let y = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        Ok(self.push(y, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let y = self.value(a).zip_map(self.value(b), |p, q| p - q)?;
        Ok(self.push(y, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let y = self.value(a).zip_map(self.value(b), |p, q| p * q)?;
        Ok(self.push(y, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let y = self.value(a).map(|v| v * c);
        self.push(y, Op::Scale(a, c), &[a])
    }

    /// `exp(c · x)` elementwise.
    pub fn exp(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x).map(|v| (c * v).exp());
        self.push(y, Op::Exp { x, c }, &[x])
    }

    /// `Σ_j weights[j] · parts[j]` with constant weights.
    pub fn weighted_sum(&mut self, parts: &[Var], weights: &[f64]) -> Result<Var> {
        if parts.is_empty() || parts.len() != weights.len() {
            return Err(Error::dim("weighted_sum", parts.len(), weights.len()));
        }
        for &p in &parts[1..] {
            self.check_same("weighted_sum", parts[0], p)?;
        }
        let mut y = Tensor::zeros(self.value(parts[0]).shape());
        for (&p, &w) in parts.iter().zip(weights) {
            for (o, v) in y.data_mut().iter_mut().zip(self.value(p).data()) {
                *o += w * v;
            }
        }
        Ok(self.push(
            y,
            Op::WeightedSum {
                parts: parts.to_vec(),
                weights: weights.to_vec(),
            },
            parts,
        ))
    }

    /// `z = mu + exp(logvar / 2) ⊙ eps`.
    pub fn reparameterize(&mut self, mu: Var, logvar: Var, eps: Tensor) -> Result<Var> {
        self.check_same("reparameterize", mu, logvar)?;
        if eps.shape() != self.value(mu).shape() {
            return Err(Error::dim(
                "reparameterize noise",
                format!("{:?}", self.value(mu).shape()),
                format!("{:?}", eps.shape()),
            ));
        }
        let mut z = self.value(mu).clone();
        for ((zv, lv), e) in z.data_mut().iter_mut().zip(self.value(logvar).data()).zip(eps.data()) {
            *zv += (0.5 * lv).exp() * e;
        }
        Ok(self.push(z, Op::Reparam { mu, logvar, eps }, &[mu, logvar]))
    }

    /// Per-row `KL(N(mu, exp(logvar)) || N(0, I))`, shape `[batch]`.
    pub fn kl_std(&mut self, mu: Var, logvar: Var) -> Result<Var> {
        self.check_same("kl_std", mu, logvar)?;
        let (m, l) = (self.value(mu), self.value(logvar));
        let rows = m.rows();
        let out = (0..rows)
            .map(|r| {
                m.row(r)
                    .iter()
                    .zip(l.row(r))
                    .map(|(&mu, &lv)| 0.5 * (lv.exp() + mu * mu - 1.0 - lv))
                    .sum()
            })
            .collect();
        Ok(self.push(Tensor::vector(out), Op::KlStd { mu, logvar }, &[mu, logvar]))
    }

    /// Per-row Gaussian log-density of the constant `x` under `N(mean, sigma² I)`.
    pub fn gaussian_ll(&mut self, x: &Tensor, mean: Var, sigma: f64) -> Result<Var> {
        if sigma <= 0.0 {
            return Err(Error::contract(format!("gaussian sigma must be > 0, got {sigma}")));
        }
        let m = self.value(mean);
        if m.shape() != x.shape() {
            return Err(Error::dim("gaussian_ll", format!("{:?}", x.shape()), format!("{:?}", m.shape())));
        }
        let d = m.cols() as f64;
        let c = -0.5 * d * (2.0 * PI * sigma * sigma).ln();
        let inv = 1.0 / (2.0 * sigma * sigma);
        let out = (0..m.rows())
            .map(|r| c - inv * x.row(r).iter().zip(m.row(r)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .collect();
        Ok(self.push(
            Tensor::vector(out),
            Op::GaussLl {
                x: x.clone(),
                mean,
                sigma,
            },
            &[mean],
        ))
    }

    /// Per-row Bernoulli log-likelihood of the constant `x` given probabilities.
    ///
    /// Probabilities are clamped into `[ε, 1-ε]`; the gradient is evaluated at
    /// the clamped value and passed through the clamp.
    pub fn bernoulli_ll(&mut self, x: &Tensor, probs: Var) -> Result<Var> {
        let p = self.value(probs);
        if p.shape() != x.shape() {
            return Err(Error::dim("bernoulli_ll", format!("{:?}", x.shape()), format!("{:?}", p.shape())));
        }
        let out = (0..p.rows())
            .map(|r| {
                x.row(r)
                    .iter()
                    .zip(p.row(r))
                    .map(|(&xv, &pv)| {
                        let pc = pv.clamp(BERNOULLI_EPS, 1.0 - BERNOULLI_EPS);
                        xv * pc.ln() + (1.0 - xv) * (1.0 - pc).ln()
                    })
                    .sum()
            })
            .collect();
        Ok(self.push(Tensor::vector(out), Op::BernLl { x: x.clone(), probs }, &[probs]))
    }

    /// Per-row `log N(z; mean, diag(exp(logvar)))`.
    pub fn log_normal(&mut self, z: Var, mean: Var, logvar: Var) -> Result<Var> {
        self.check_same("log_normal", z, mean)?;
        self.check_same("log_normal", z, logvar)?;
        let (zv, mv, lv) = (self.value(z), self.value(mean), self.value(logvar));
        let out = (0..zv.rows())
            .map(|r| {
                let mut s = 0.0;
                for ((&a, &m), &l) in zv.row(r).iter().zip(mv.row(r)).zip(lv.row(r)) {
                    s += -HALF_LN_2PI - 0.5 * l - 0.5 * (a - m) * (a - m) * (-l).exp();
                }
                s
            })
            .collect();
        Ok(self.push(Tensor::vector(out), Op::LogNormal { z, mean, logvar }, &[z, mean, logvar]))
    }

    /// Per-row `log N(z; mean, diag(std²))`.
    pub fn log_normal_std(&mut self, z: Var, mean: Var, std: Var) -> Result<Var> {
        self.check_same("log_normal_std", z, mean)?;
        self.check_same("log_normal_std", z, std)?;
        let (zv, mv, sv) = (self.value(z), self.value(mean), self.value(std));
        let out = (0..zv.rows())
            .map(|r| {
                let mut s = 0.0;
                for ((&a, &m), &sd) in zv.row(r).iter().zip(mv.row(r)).zip(sv.row(r)) {
                    let u = (a - m) / sd;
                    s += -HALF_LN_2PI - sd.ln() - 0.5 * u * u;
                }
                s
            })
            .collect();
        Ok(self.push(Tensor::vector(out), Op::LogNormalStd { z, mean, std }, &[z, mean, std]))
    }

    /// Per-row `log N(z; 0, I)`.
    pub fn log_std_normal(&mut self, z: Var) -> Var {
        let zv = self.value(z);
        let out = (0..zv.rows())
            .map(|r| zv.row(r).iter().map(|a| -HALF_LN_2PI - 0.5 * a * a).sum())
            .collect();
        self.push(Tensor::vector(out), Op::LogStdNormal { z }, &[z])
    }

    /// Elementwise `log((1/K) Σ_k exp(parts[k]))`, stabilised by the running max.
    pub fn log_mean_exp(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("log_mean_exp needs at least one input"));
        }
        for &p in &parts[1..] {
            self.check_same("log_mean_exp", parts[0], p)?;
        }
        let n = self.value(parts[0]).len();
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let vals: Vec<f64> = parts.iter().map(|&p| self.value(p).data()[i]).collect();
            *o = log_mean_exp(&vals);
        }
        let shape = self.value(parts[0]).shape().to_vec();
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LogMeanExp {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a).mean();
        self.push(Tensor::scalar(m), Op::Mean(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Consumes the tape and returns `d loss / d param` for every registered
    /// parameter that the loss depends on.
    pub fn backprop(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backprop needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let mut map = BTreeMap::new();
        for (name, v) in self.params {
            if v.0 < n {
                if let Some(g) = grads[v.0].take() {
                    map.insert(name, g);
                }
            }
        }
        Ok(Gradients { map })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backward_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                if self.nodes[x.0].needs_grad {
                    let gx = g.matmul(self.value(*w))?;
                    self.accumulate(grads, *x, gx);
                }
                if self.nodes[w.0].needs_grad {
                    let gw = g.matmul_tn(self.value(*x))?;
                    self.accumulate(grads, *w, gw);
                }
                if self.nodes[b.0].needs_grad {
                    let cols = g.cols();
                    let mut gb = vec![0.0; cols];
                    for r in 0..g.rows() {
                        for (acc, v) in gb.iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    let shape = self.value(*b).shape().to_vec();
                    self.accumulate(grads, *b, Tensor::new(shape, gb)?);
                }
            }
            Op::Act { x, kind } => {
                let gx = g.zip_map(y, |gv, yv| gv * kind.derivative_from_output(yv))?;
                self.accumulate(grads, *x, gx);
            }
            Op::Clamp { x } => self.accumulate(grads, *x, g.clone()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(self.value(*b), |gv, bv| gv * bv)?;
                let gb = g.zip_map(self.value(*a), |gv, av| gv * av)?;
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|v| v * c)),
            Op::Exp { x, c } => {
                let gx = g.zip_map(y, |gv, yv| gv * c * yv)?;
                self.accumulate(grads, *x, gx);
            }
            Op::WeightedSum { parts, weights } => {
                for (&p, &w) in parts.iter().zip(weights) {
                    self.accumulate(grads, p, g.map(|v| v * w));
                }
            }
            Op::Reparam { mu, logvar, eps } => {
                self.accumulate(grads, *mu, g.clone());
                let lv = self.value(*logvar);
                let mut gl = g.clone();
                for ((o, l), e) in gl.data_mut().iter_mut().zip(lv.data()).zip(eps.data()) {
                    *o *= 0.5 * (0.5 * l).exp() * e;
                }
                self.accumulate(grads, *logvar, gl);
            }
            Op::KlStd { mu, logvar } => {
                let m = self.value(*mu);
                let l = self.value(*logvar);
                let cols = m.cols();
                let mut gm = Tensor::zeros(m.shape());
                let mut gl = Tensor::zeros(l.shape());
                for r in 0..m.rows() {
                    let gr = g.data()[r];
                    for c in 0..cols {
                        let k = r * cols + c;
                        gm.data_mut()[k] = gr * m.data()[k];
                        gl.data_mut()[k] = gr * 0.5 * (l.data()[k].exp() - 1.0);
                    }
                }
                self.accumulate(grads, *mu, gm);
                self.accumulate(grads, *logvar, gl);
            }
            Op::GaussLl { x, mean, sigma } => {
                let m = self.value(*mean);
                let inv = 1.0 / (sigma * sigma);
                let mut gm = Tensor::zeros(m.shape());
                let cols = m.cols();
                for r in 0..m.rows() {
                    let gr = g.data()[r];
                    for c in 0..cols {
                        let k = r * cols + c;
                        gm.data_mut()[k] = gr * inv * (x.data()[k] - m.data()[k]);
                    }
                }
                self.accumulate(grads, *mean, gm);
            }
            Op::BernLl { x, probs } => {
                let p = self.value(*probs);
                let mut gp = Tensor::zeros(p.shape());
                let cols = p.cols();
                for r in 0..p.rows() {
                    let gr = g.data()[r];
                    for c in 0..cols {
                        let k = r * cols + c;
                        let pc = p.data()[k].clamp(BERNOULLI_EPS, 1.0 - BERNOULLI_EPS);
                        let xv = x.data()[k];
                        gp.data_mut()[k] = gr * (xv / pc - (1.0 - xv) / (1.0 - pc));
                    }
                }
                self.accumulate(grads, *probs, gp);
            }
            Op::LogNormal { z, mean, logvar } => {
                let (zv, mv, lv) = (self.value(*z), self.value(*mean), self.value(*logvar));
                let mut gz = Tensor::zeros(zv.shape());
                let mut gl = Tensor::zeros(zv.shape());
                let cols = zv.cols();
                for r in 0..zv.rows() {
                    let gr = g.data()[r];
                    for c in 0..cols {
                        let k = r * cols + c;
                        let diff = zv.data()[k] - mv.data()[k];
                        let prec = (-lv.data()[k]).exp();
                        gz.data_mut()[k] = -gr * diff * prec;
                        gl.data_mut()[k] = gr * (-0.5 + 0.5 * diff * diff * prec);
                    }
                }
                let gm = gz.map(|v| -v);
                self.accumulate(grads, *z, gz);
                self.accumulate(grads, *mean, gm);
                self.accumulate(grads, *logvar, gl);
            }
            Op::LogNormalStd { z, mean, std } => {
                let (zv, mv, sv) = (self.value(*z), self.value(*mean), self.value(*std));
                let mut gz = Tensor::zeros(zv.shape());
                let mut gs = Tensor::zeros(zv.shape());
                let cols = zv.cols();
                for r in 0..zv.rows() {
                    let gr = g.data()[r];
                    for c in 0..cols {
                        let k = r * cols + c;
                        let sd = sv.data()[k];
                        let diff = zv.data()[k] - mv.data()[k];
                        gz.data_mut()[k] = -gr * diff / (sd * sd);
                        gs.data_mut()[k] = gr * (-1.0 / sd + diff * diff / (sd * sd * sd));
                    }
                }
                let gm = gz.map(|v| -v);
                self.accumulate(grads, *z, gz);
                self.accumulate(grads, *mean, gm);
                self.accumulate(grads, *std, gs);
            }
            Op::LogStdNormal { z } => {
                let zv = self.value(*z);
                let mut gz = Tensor::zeros(zv.shape());
                let cols = zv.cols();
                for r in 0..zv.rows() {
                    let gr = g.data()[r];
                    for c in 0..cols {
                        let k = r * cols + c;
                        gz.data_mut()[k] = -gr * zv.data()[k];
                    }
                }
                self.accumulate(grads, *z, gz);
            }
            Op::LogMeanExp { parts } => {
                // d/dp_k log mean exp = softmax weight of p_k.
                let k = parts.len() as f64;
                for &p in parts {
                    let pv = self.value(p);
                    let gp = Tensor::new(
                        pv.shape().to_vec(),
                        pv.data()
                            .iter()
                            .zip(y.data())
                            .zip(g.data())
                            .map(|((&a, &lme), &gv)| gv * (a - lme).exp() / k)
                            .collect(),
                    )?;
                    self.accumulate(grads, p, gp);
                }
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let s = g.item() / av.len().max(1) as f64;
                self.accumulate(grads, *a, Tensor::filled(av.shape(), s));
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                self.accumulate(grads, *a, Tensor::filled(av.shape(), g.item()));
            }
        }
        Ok(())
    }
}

/// `log((1/K) Σ exp(v_k))` computed with max-shift stabilisation.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + (s / values.len() as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.param("x", &Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backprop(x), Err(Error::Contract(_))));
    }

    #[test]
    fn log_mean_exp_of_equal_values() {
        assert!((log_mean_exp(&[-3.5; 7]) + 3.5).abs() < 1e-15);
        assert!((log_mean_exp(&[0.0, 2f64.ln()]) - 1.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn linear_loss_gradient_is_input_broadcast() {
        // loss = sum(x · Wᵀ) ⇒ dL/dW[o, i] = Σ_b x[b, i]
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let w = t.param("w", &Tensor::zeros(&[2, 3]));
        let b = t.param("b", &Tensor::zeros(&[2]));
        let y = t.affine(x, w, b).unwrap();
        let l = t.sum(y);
        let g = t.backprop(l).unwrap();
        assert_eq!(g.get("w").unwrap().data(), &[5., 7., 9., 5., 7., 9.]);
        assert_eq!(g.get("b").unwrap().data(), &[2., 2.]);
    }

    #[test]
    fn squared_distance_is_stationary_at_mean() {
        let mut t = Tape::new();
        let mu = t.param("mu", &Tensor::vector(vec![0.3, -1.2]));
        let x = t.constant(Tensor::vector(vec![0.3, -1.2]));
        let d = t.sub(x, mu).unwrap();
        let d2 = t.mul(d, d).unwrap();
        let l = t.sum(d2);
        let g = t.backprop(l).unwrap();
        assert!(g.get("mu").unwrap().data().iter().all(|&v| v == 0.0));
    }
}
