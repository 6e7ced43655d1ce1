//! VAE components whose encoder and decoder are each split into a lower and
//! an upper sub-module, so that graph nodes can share halves of them.
//!
//! ```text
//! x ──enc_lower──► h ──enc_mu / enc_logvar──► (μ, log σ²) ──ε──► z
//! z ──dec_lower──► x̃ ──dec_upper──► p(x | z)
//! ```
//!
//! Every estimator exists twice: a tape version used for training and
//! gradient checks, and a plain version used for evaluation. Both consume
//! noise in the same order (one `[batch, latent]` draw per importance
//! sample), so they agree exactly under a shared seed.

use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnkit::dist::{self, LOGVAR_MAX, LOGVAR_MIN};
use crate::nnkit::tape::log_mean_exp;
use crate::nnkit::{Activation, AdamState, Binding, DenseLayer, Parameterized, Rng, Tape, Tensor, Var};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Likelihood {
    Bernoulli,
    Gaussian { sigma: f64 },
}

impl Likelihood {
    /// Fixed-variance Gaussian with `σ = 1/√2`, under which `−log p(x|z)`
    /// is the squared error plus a constant.
    pub fn unit_square_loss_gaussian() -> Self {
        Likelihood::Gaussian { sigma: FRAC_1_SQRT_2 }
    }

    pub fn output_activation(self) -> Activation {
        match self {
            Likelihood::Bernoulli => Activation::Sigmoid,
            Likelihood::Gaussian { .. } => Activation::Identity,
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            Likelihood::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::contract(format!("gaussian sigma must be > 0, got {sigma}")))
            }
            _ => Ok(()),
        }
    }

    pub fn log_likelihood_on(self, tape: &mut Tape, x: &Tensor, out: Var) -> Result<Var> {
        match self {
            Likelihood::Bernoulli => tape.bernoulli_ll(x, out),
            Likelihood::Gaussian { sigma } => tape.gaussian_ll(x, out, sigma),
        }
    }

    pub fn log_likelihood(self, x: &Tensor, out: &Tensor) -> Result<Vec<f64>> {
        match self {
            Likelihood::Bernoulli => dist::bernoulli_log_likelihood(x, out),
            Likelihood::Gaussian { sigma } => dist::gaussian_log_likelihood(x, out, sigma),
        }
    }

    /// Turns decoder outputs into data-space samples: Bernoulli pixels are
    /// sampled, Gaussian means are clipped into `[0, 1]`.
    pub fn sample_from_outputs(self, out: &Tensor, rng: &mut Rng) -> Tensor {
        match self {
            Likelihood::Bernoulli => out.map(|p| if rng.bernoulli(p) { 1.0 } else { 0.0 }),
            Likelihood::Gaussian { .. } => out.map(|m| m.clamp(0.0, 1.0)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VaeShape {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
}

impl VaeShape {
    pub fn new(input_dim: usize, hidden_dim: usize, latent_dim: usize) -> Result<Self> {
        let s = VaeShape {
            input_dim,
            hidden_dim,
            latent_dim,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.latent_dim == 0 {
            return Err(Error::contract(format!("all VAE widths must be > 0, got {self:?}")));
        }
        Ok(())
    }
}

/// Per-row statistics of the amortised posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub mu: Tensor,
    /// Already clamped into the log-variance range.
    pub logvar: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeComponent {
    pub enc_lower: DenseLayer,
    pub enc_mu: DenseLayer,
    pub enc_logvar: DenseLayer,
    pub dec_lower: DenseLayer,
    pub dec_upper: DenseLayer,
    pub likelihood: Likelihood,
}

fn bind(train: bool, name: &str) -> Binding<'_> {
    if train {
        Binding::Train(name)
    } else {
        Binding::Frozen
    }
}

fn check_width(op: &'static str, x: &Tensor, width: usize) -> Result<()> {
    if x.shape().len() != 2 || x.cols() != width {
        return Err(Error::dim(op, format!("[batch, {width}]"), format!("{:?}", x.shape())));
    }
    Ok(())
}

fn clamp_logvar(t: Tensor) -> Tensor {
    t.map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX))
}

/// Per-row `log N(z; mean, diag(exp(logvar)))`.
pub(crate) fn log_normal_rows(z: &Tensor, mean: &Tensor, logvar: &Tensor) -> Vec<f64> {
    (0..z.rows())
        .map(|r| {
            z.row(r)
                .iter()
                .zip(mean.row(r))
                .zip(logvar.row(r))
                .map(|((&a, &m), &l)| -HALF_LN_2PI - 0.5 * l - 0.5 * (a - m) * (a - m) * (-l).exp())
                .sum()
        })
        .collect()
}

/// Per-row `log N(z; mean, diag(std²))`.
pub(crate) fn log_normal_std_rows(z: &Tensor, mean: &Tensor, std: &Tensor) -> Vec<f64> {
    (0..z.rows())
        .map(|r| {
            z.row(r)
                .iter()
                .zip(mean.row(r))
                .zip(std.row(r))
                .map(|((&a, &m), &s)| {
                    let u = (a - m) / s;
                    -HALF_LN_2PI - s.ln() - 0.5 * u * u
                })
                .sum()
        })
        .collect()
}

pub(crate) fn log_std_normal_rows(z: &Tensor) -> Vec<f64> {
    (0..z.rows())
        .map(|r| z.row(r).iter().map(|a| -HALF_LN_2PI - 0.5 * a * a).sum())
        .collect()
}

/// Row-wise log-mean-exp across importance samples.
pub(crate) fn combine_log_weights(log_w: &[Vec<f64>]) -> Vec<f64> {
    let rows = log_w.first().map_or(0, Vec::len);
    (0..rows)
        .map(|r| {
            let vals: Vec<f64> = log_w.iter().map(|w| w[r]).collect();
            log_mean_exp(&vals)
        })
        .collect()
}

pub(crate) fn check_kprime(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::contract("the number of importance samples K' must be >= 1"));
    }
    Ok(())
}

impl VaeComponent {
    pub fn new(shape: VaeShape, likelihood: Likelihood, rng: &mut Rng) -> Result<Self> {
        shape.validate()?;
        likelihood.validate()?;
        let VaeShape {
            input_dim: d,
            hidden_dim: h,
            latent_dim: l,
        } = shape;
        Ok(VaeComponent {
            enc_lower: DenseLayer::new(d, h, Activation::LeakyRelu, rng),
            enc_mu: DenseLayer::new(h, l, Activation::Identity, rng),
            enc_logvar: DenseLayer::new(h, l, Activation::Identity, rng),
            dec_lower: DenseLayer::new(l, h, Activation::LeakyRelu, rng),
            dec_upper: DenseLayer::new(h, d, likelihood.output_activation(), rng),
            likelihood,
        })
    }

    /// All weights and biases zero; the posterior is `N(0, I)` for every input.
    pub fn zeroed(shape: VaeShape, likelihood: Likelihood) -> Result<Self> {
        shape.validate()?;
        likelihood.validate()?;
        let VaeShape {
            input_dim: d,
            hidden_dim: h,
            latent_dim: l,
        } = shape;
        Ok(VaeComponent {
            enc_lower: DenseLayer::zeros(d, h, Activation::LeakyRelu),
            enc_mu: DenseLayer::zeros(h, l, Activation::Identity),
            enc_logvar: DenseLayer::zeros(h, l, Activation::Identity),
            dec_lower: DenseLayer::zeros(l, h, Activation::LeakyRelu),
            dec_upper: DenseLayer::zeros(h, d, likelihood.output_activation()),
            likelihood,
        })
    }

    pub fn shape(&self) -> VaeShape {
        VaeShape {
            input_dim: self.enc_lower.input_dim(),
            hidden_dim: self.enc_lower.output_dim(),
            latent_dim: self.enc_mu.output_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.enc_lower.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.enc_mu.output_dim()
    }

    // ---- tape forms ----

    pub fn enc_lower_on(&self, tape: &mut Tape, x: Var, train: bool) -> Result<Var> {
        self.enc_lower.forward_on(tape, x, bind(train, "enc_lower"))
    }

    /// `(μ, clamped log σ²)` from the hidden encoder representation.
    pub fn enc_upper_on(&self, tape: &mut Tape, h: Var, train: bool) -> Result<(Var, Var)> {
        let mu = self.enc_mu.forward_on(tape, h, bind(train, "enc_mu"))?;
        let lv = self.enc_logvar.forward_on(tape, h, bind(train, "enc_logvar"))?;
        Ok((mu, tape.clamp_logvar(lv)))
    }

    pub fn dec_lower_on(&self, tape: &mut Tape, z: Var, train: bool) -> Result<Var> {
        self.dec_lower.forward_on(tape, z, bind(train, "dec_lower"))
    }

    pub fn dec_upper_on(&self, tape: &mut Tape, h: Var, train: bool) -> Result<Var> {
        self.dec_upper.forward_on(tape, h, bind(train, "dec_upper"))
    }

    fn posterior_on(&self, tape: &mut Tape, x: &Tensor, train: bool) -> Result<(Var, Var)> {
        check_width("vae_input", x, self.input_dim())?;
        let xv = tape.constant(x.clone());
        let h = self.enc_lower_on(tape, xv, train)?;
        self.enc_upper_on(tape, h, train)
    }

    fn decode_on(&self, tape: &mut Tape, z: Var, train: bool) -> Result<Var> {
        let h = self.dec_lower_on(tape, z, train)?;
        self.dec_upper_on(tape, h, train)
    }

    /// Per-row `log p(x|z) − KL(q(z|x) ‖ N(0, I))` with `z = μ + σ ⊙ eps`.
    pub fn elbo_on(&self, tape: &mut Tape, x: &Tensor, eps: Tensor, train: bool) -> Result<Var> {
        let (mu, lv) = self.posterior_on(tape, x, train)?;
        let z = tape.reparameterize(mu, lv, eps)?;
        let out = self.decode_on(tape, z, train)?;
        let ll = self.likelihood.log_likelihood_on(tape, x, out)?;
        let kl = tape.kl_std(mu, lv)?;
        tape.sub(ll, kl)
    }

    /// Per-row importance-weighted bound over `eps.len()` samples. A single
    /// sample takes the analytic-KL path and equals [`Self::elbo_on`].
    pub fn iwelbo_on(&self, tape: &mut Tape, x: &Tensor, mut eps: Vec<Tensor>, train: bool) -> Result<Var> {
        check_kprime(eps.len())?;
        if eps.len() == 1 {
            return self.elbo_on(tape, x, eps.pop().expect("one sample"), train);
        }
        let (mu, lv) = self.posterior_on(tape, x, train)?;
        let mut log_w = Vec::with_capacity(eps.len());
        for e in eps {
            let z = tape.reparameterize(mu, lv, e)?;
            let out = self.decode_on(tape, z, train)?;
            let ll = self.likelihood.log_likelihood_on(tape, x, out)?;
            let prior = tape.log_std_normal(z);
            let q = tape.log_normal(z, mu, lv)?;
            let joint = tape.add(ll, prior)?;
            log_w.push(tape.sub(joint, q)?);
        }
        tape.log_mean_exp(&log_w)
    }

    // ---- plain forms ----

    pub fn encode(&self, x: &Tensor) -> Result<Posterior> {
        check_width("encode", x, self.input_dim())?;
        let h = self.enc_lower.forward(x)?;
        Ok(Posterior {
            mu: self.enc_mu.forward(&h)?,
            logvar: clamp_logvar(self.enc_logvar.forward(&h)?),
        })
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        check_width("decode", z, self.latent_dim())?;
        self.dec_upper.forward(&self.dec_lower.forward(z)?)
    }

    /// Deterministic encode-decode through the posterior mean.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.decode(&self.encode(x)?.mu)
    }

    pub fn kl(&self, x: &Tensor) -> Result<Vec<f64>> {
        let p = self.encode(x)?;
        dist::kl_diag_gaussian_to_standard(&p.mu, &p.logvar)
    }

    pub fn elbo(&self, x: &Tensor, rng: &mut Rng) -> Result<Vec<f64>> {
        let eps = rng.normal_tensor(&[x.rows(), self.latent_dim()]);
        self.elbo_with_noise(x, &eps)
    }

    pub fn elbo_with_noise(&self, x: &Tensor, eps: &Tensor) -> Result<Vec<f64>> {
        let p = self.encode(x)?;
        let z = dist::reparameterize_with(&p.mu, &p.logvar, eps)?;
        let ll = self.likelihood.log_likelihood(x, &self.decode(&z)?)?;
        let kl = dist::kl_diag_gaussian_to_standard(&p.mu, &p.logvar)?;
        Ok(ll.iter().zip(&kl).map(|(a, b)| a - b).collect())
    }

    pub fn iwelbo(&self, x: &Tensor, k: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        check_kprime(k)?;
        let eps: Vec<Tensor> = (0..k).map(|_| rng.normal_tensor(&[x.rows(), self.latent_dim()])).collect();
        self.iwelbo_with_noise(x, &eps)
    }

    pub fn iwelbo_with_noise(&self, x: &Tensor, eps: &[Tensor]) -> Result<Vec<f64>> {
        check_kprime(eps.len())?;
        if eps.len() == 1 {
            return self.elbo_with_noise(x, &eps[0]);
        }
        let p = self.encode(x)?;
        let mut log_w = Vec::with_capacity(eps.len());
        for e in eps {
            let z = dist::reparameterize_with(&p.mu, &p.logvar, e)?;
            let ll = self.likelihood.log_likelihood(x, &self.decode(&z)?)?;
            let prior = log_std_normal_rows(&z);
            let q = log_normal_rows(&z, &p.mu, &p.logvar);
            log_w.push((0..x.rows()).map(|r| ll[r] + prior[r] - q[r]).collect::<Vec<_>>());
        }
        Ok(combine_log_weights(&log_w))
    }

    pub fn generate_outputs(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        if n == 0 {
            return Ok(Tensor::zeros(&[0, self.input_dim()]));
        }
        self.decode(&rng.normal_tensor(&[n, self.latent_dim()]))
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.enc_lower.visit("enc_lower", f);
        self.enc_mu.visit("enc_mu", f);
        self.enc_logvar.visit("enc_logvar", f);
        self.dec_lower.visit("dec_lower", f);
        self.dec_upper.visit("dec_upper", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.enc_lower.visit_mut("enc_lower", f);
        self.enc_mu.visit_mut("enc_mu", f);
        self.enc_logvar.visit_mut("enc_logvar", f);
        self.dec_lower.visit_mut("dec_lower", f);
        self.dec_upper.visit_mut("dec_upper", f);
    }
}

impl Parameterized for VaeComponent {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.visit(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.visit_mut(f);
    }
}

/// Draws the per-sample noise for a `k`-sample estimator in the canonical order.
pub fn draw_noise(rows: usize, latent: usize, k: usize, rng: &mut Rng) -> Vec<Tensor> {
    (0..k).map(|_| rng.normal_tensor(&[rows, latent])).collect()
}

/// A single trainable generative model: what the replay baselines and the
/// bound diagnostics need from either VAE variant.
pub trait GenerativeModel: Parameterized + Clone {
    fn input_dim(&self) -> usize;
    fn likelihood(&self) -> Likelihood;

    /// Per-row training objective on a tape with all parameters trainable.
    fn objective_on(&self, tape: &mut Tape, x: &Tensor, kprime: usize, rng: &mut Rng) -> Result<Var>;

    fn elbo(&self, x: &Tensor, rng: &mut Rng) -> Result<Vec<f64>>;
    fn iwelbo(&self, x: &Tensor, k: usize, rng: &mut Rng) -> Result<Vec<f64>>;

    /// Posterior mean of the first stochastic layer.
    fn encode_mean(&self, x: &Tensor) -> Result<Tensor>;
    /// Per-row KL of the first-layer posterior to `N(0, I)`.
    fn encoder_kl(&self, x: &Tensor) -> Result<Vec<f64>>;
    fn reconstruct(&self, x: &Tensor) -> Result<Tensor>;
    fn generate_outputs(&self, n: usize, rng: &mut Rng) -> Result<Tensor>;

    /// `n` data-space samples from the prior (see [`Likelihood::sample_from_outputs`]).
    fn generate(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        let out = self.generate_outputs(n, rng)?;
        Ok(self.likelihood().sample_from_outputs(&out, rng))
    }

    /// One Adam step on `−mean(objective)`; returns the mean objective.
    fn train_step(&mut self, adam: &mut AdamState, x: &Tensor, kprime: usize, rng: &mut Rng) -> Result<f64> {
        let mut tape = Tape::new();
        let obj = self.objective_on(&mut tape, x, kprime, rng)?;
        let mean = tape.mean(obj);
        let value = tape.value(mean).item();
        let loss = tape.scale(mean, -1.0);
        let grads = tape.backprop(loss)?;
        adam.step(self, &grads)?;
        Ok(value)
    }
}

impl GenerativeModel for VaeComponent {
    fn input_dim(&self) -> usize {
        VaeComponent::input_dim(self)
    }

    fn likelihood(&self) -> Likelihood {
        self.likelihood
    }

    fn objective_on(&self, tape: &mut Tape, x: &Tensor, kprime: usize, rng: &mut Rng) -> Result<Var> {
        check_kprime(kprime)?;
        let eps = draw_noise(x.rows(), self.latent_dim(), kprime, rng);
        self.iwelbo_on(tape, x, eps, true)
    }

    fn elbo(&self, x: &Tensor, rng: &mut Rng) -> Result<Vec<f64>> {
        VaeComponent::elbo(self, x, rng)
    }

    fn iwelbo(&self, x: &Tensor, k: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        VaeComponent::iwelbo(self, x, k, rng)
    }

    fn encode_mean(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.encode(x)?.mu)
    }

    fn encoder_kl(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.kl(x)
    }

    fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        VaeComponent::reconstruct(self, x)
    }

    fn generate_outputs(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        VaeComponent::generate_outputs(self, n, rng)
    }
}

// ---------------------------------------------------------------------------
// Two stochastic layers

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierShape {
    pub base: VaeShape,
    /// Width of the hidden layers inside the second stochastic layer.
    pub hidden2: usize,
    pub latent2: usize,
}

/// `q(z2 | z1)` and the learned conditional prior `p(z1 | z2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondLayer {
    pub enc_lower: DenseLayer,
    pub enc_mu: DenseLayer,
    pub enc_logvar: DenseLayer,
    pub prior_lower: DenseLayer,
    pub prior_mu: DenseLayer,
    pub prior_logvar: DenseLayer,
}

impl SecondLayer {
    fn build(l1: usize, h: usize, l2: usize, mut make: impl FnMut(usize, usize, Activation) -> DenseLayer) -> Self {
        SecondLayer {
            enc_lower: make(l1, h, Activation::LeakyRelu),
            enc_mu: make(h, l2, Activation::Identity),
            enc_logvar: make(h, l2, Activation::Identity),
            prior_lower: make(l2, h, Activation::LeakyRelu),
            prior_mu: make(h, l1, Activation::Identity),
            prior_logvar: make(h, l1, Activation::Identity),
        }
    }

    fn layers(&self) -> [(&'static str, &DenseLayer); 6] {
        [
            ("z2.enc_lower", &self.enc_lower),
            ("z2.enc_mu", &self.enc_mu),
            ("z2.enc_logvar", &self.enc_logvar),
            ("z2.prior_lower", &self.prior_lower),
            ("z2.prior_mu", &self.prior_mu),
            ("z2.prior_logvar", &self.prior_logvar),
        ]
    }

    fn latent_dim(&self) -> usize {
        self.enc_mu.output_dim()
    }

    fn heads_on(
        tape: &mut Tape,
        lower: &DenseLayer,
        mu: &DenseLayer,
        lv: &DenseLayer,
        names: [&str; 3],
        input: Var,
        train: bool,
    ) -> Result<(Var, Var)> {
        let h = lower.forward_on(tape, input, bind(train, names[0]))?;
        let m = mu.forward_on(tape, h, bind(train, names[1]))?;
        let l = lv.forward_on(tape, h, bind(train, names[2]))?;
        Ok((m, tape.clamp_logvar(l)))
    }

    fn posterior_on(&self, tape: &mut Tape, z1: Var, train: bool) -> Result<(Var, Var)> {
        Self::heads_on(
            tape,
            &self.enc_lower,
            &self.enc_mu,
            &self.enc_logvar,
            ["z2.enc_lower", "z2.enc_mu", "z2.enc_logvar"],
            z1,
            train,
        )
    }

    fn prior_on(&self, tape: &mut Tape, z2: Var, train: bool) -> Result<(Var, Var)> {
        Self::heads_on(
            tape,
            &self.prior_lower,
            &self.prior_mu,
            &self.prior_logvar,
            ["z2.prior_lower", "z2.prior_mu", "z2.prior_logvar"],
            z2,
            train,
        )
    }
}

/// A VAE with an optional second stochastic layer:
/// `q(z1|x) q(z2|z1)` against `p(z2) p(z1|z2)`, with `p(z2) = N(0, I)`.
/// Without the second layer it is exactly the base component.
#[derive(Clone, Debug, PartialEq)]
pub struct HierVae {
    pub base: VaeComponent,
    pub second: Option<SecondLayer>,
}

impl HierVae {
    pub fn new(shape: HierShape, likelihood: Likelihood, rng: &mut Rng) -> Result<Self> {
        let base = VaeComponent::new(shape.base, likelihood, rng)?;
        if shape.latent2 == 0 || shape.hidden2 == 0 {
            return Ok(HierVae { base, second: None });
        }
        let second = SecondLayer::build(shape.base.latent_dim, shape.hidden2, shape.latent2, |i, o, a| {
            DenseLayer::new(i, o, a, rng)
        });
        Ok(HierVae {
            base,
            second: Some(second),
        })
    }

    pub fn zeroed(shape: HierShape, likelihood: Likelihood) -> Result<Self> {
        let base = VaeComponent::zeroed(shape.base, likelihood)?;
        let second = (shape.latent2 > 0 && shape.hidden2 > 0)
            .then(|| SecondLayer::build(shape.base.latent_dim, shape.hidden2, shape.latent2, DenseLayer::zeros));
        Ok(HierVae { base, second })
    }

    /// Wraps a plain component with the second layer disabled.
    pub fn single(base: VaeComponent) -> Self {
        HierVae { base, second: None }
    }

    pub fn shape(&self) -> HierShape {
        HierShape {
            base: self.base.shape(),
            hidden2: self.second.as_ref().map_or(0, |s| s.enc_lower.output_dim()),
            latent2: self.second.as_ref().map_or(0, SecondLayer::latent_dim),
        }
    }

    fn noise(&self, rows: usize, k: usize, rng: &mut Rng) -> Vec<(Tensor, Option<Tensor>)> {
        let l1 = self.base.latent_dim();
        let l2 = self.second.as_ref().map(SecondLayer::latent_dim);
        (0..k)
            .map(|_| {
                let e1 = rng.normal_tensor(&[rows, l1]);
                let e2 = l2.map(|l| rng.normal_tensor(&[rows, l]));
                (e1, e2)
            })
            .collect()
    }

    /// Per-row bound over the given noise draws; one draw gives the ELBO
    /// with the `z2` KL analytic and the `z1` term as a single-sample ratio.
    pub fn bound_on(&self, tape: &mut Tape, x: &Tensor, eps: Vec<(Tensor, Option<Tensor>)>, train: bool) -> Result<Var> {
        check_kprime(eps.len())?;
        let Some(second) = &self.second else {
            let e1: Vec<Tensor> = eps.into_iter().map(|(e, _)| e).collect();
            return self.base.iwelbo_on(tape, x, e1, train);
        };
        let single = eps.len() == 1;
        let (mu1, lv1) = self.base.posterior_on(tape, x, train)?;
        let mut log_w = Vec::with_capacity(eps.len());
        for (e1, e2) in eps {
            let e2 = e2.ok_or_else(|| Error::contract("second-layer noise missing"))?;
            let z1 = tape.reparameterize(mu1, lv1, e1)?;
            let out = self.base.decode_on(tape, z1, train)?;
            let ll = self.base.likelihood.log_likelihood_on(tape, x, out)?;
            let (mu2, lv2) = second.posterior_on(tape, z1, train)?;
            let z2 = tape.reparameterize(mu2, lv2, e2)?;
            let (pm, plv) = second.prior_on(tape, z2, train)?;
            let log_p1 = tape.log_normal(z1, pm, plv)?;
            let log_q1 = tape.log_normal(z1, mu1, lv1)?;
            let a = tape.add(ll, log_p1)?;
            let a = tape.sub(a, log_q1)?;
            let w = if single {
                let kl2 = tape.kl_std(mu2, lv2)?;
                tape.sub(a, kl2)?
            } else {
                let log_p2 = tape.log_std_normal(z2);
                let log_q2 = tape.log_normal(z2, mu2, lv2)?;
                let b = tape.add(a, log_p2)?;
                tape.sub(b, log_q2)?
            };
            log_w.push(w);
        }
        if single {
            Ok(log_w[0])
        } else {
            tape.log_mean_exp(&log_w)
        }
    }

    pub fn hier_elbo(&self, x: &Tensor, rng: &mut Rng) -> Result<Vec<f64>> {
        let eps = self.noise(x.rows(), 1, rng);
        self.bound_with_noise(x, eps)
    }

    pub fn bound_with_noise(&self, x: &Tensor, eps: Vec<(Tensor, Option<Tensor>)>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = self.bound_on(&mut tape, x, eps, false)?;
        Ok(tape.value(v).data().to_vec())
    }
}

impl Parameterized for HierVae {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.base.visit(f);
        if let Some(s) = &self.second {
            for (name, layer) in s.layers() {
                layer.visit(name, f);
            }
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.base.visit_mut(f);
        if let Some(s) = &mut self.second {
            s.enc_lower.visit_mut("z2.enc_lower", f);
            s.enc_mu.visit_mut("z2.enc_mu", f);
            s.enc_logvar.visit_mut("z2.enc_logvar", f);
            s.prior_lower.visit_mut("z2.prior_lower", f);
            s.prior_mu.visit_mut("z2.prior_mu", f);
            s.prior_logvar.visit_mut("z2.prior_logvar", f);
        }
    }
}

impl GenerativeModel for HierVae {
    fn input_dim(&self) -> usize {
        self.base.input_dim()
    }

    fn likelihood(&self) -> Likelihood {
        self.base.likelihood
    }

    fn objective_on(&self, tape: &mut Tape, x: &Tensor, kprime: usize, rng: &mut Rng) -> Result<Var> {
        check_kprime(kprime)?;
        let eps = self.noise(x.rows(), kprime, rng);
        self.bound_on(tape, x, eps, true)
    }

    fn elbo(&self, x: &Tensor, rng: &mut Rng) -> Result<Vec<f64>> {
        self.hier_elbo(x, rng)
    }

    fn iwelbo(&self, x: &Tensor, k: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        check_kprime(k)?;
        if self.second.is_none() {
            return self.base.iwelbo(x, k, rng);
        }
        let eps = self.noise(x.rows(), k, rng);
        self.bound_with_noise(x, eps)
    }

    fn encode_mean(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.base.encode(x)?.mu)
    }

    fn encoder_kl(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.base.kl(x)
    }

    fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.base.reconstruct(x)
    }

    fn generate_outputs(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        let Some(second) = &self.second else {
            return self.base.generate_outputs(n, rng);
        };
        if n == 0 {
            return Ok(Tensor::zeros(&[0, self.base.input_dim()]));
        }
        let z2 = rng.normal_tensor(&[n, second.latent_dim()]);
        let h = second.prior_lower.forward(&z2)?;
        let pm = second.prior_mu.forward(&h)?;
        let plv = clamp_logvar(second.prior_logvar.forward(&h)?);
        let z1 = dist::reparameterize(&pm, &plv, rng)?;
        self.base.decode(&z1)
    }
}
