//! Gaussian / Bernoulli likelihoods, the diagonal-Gaussian KL to the standard
//! normal, and the reparameterised sampler, evaluated directly on tensors.
//!
//! The tape has matching differentiable versions; these are the plain
//! evaluation forms used for reporting and as test references.

use std::f64::consts::PI;

use super::{Rng, Tensor};
use crate::error::{Error, Result};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;
pub const BERNOULLI_EPS: f64 = 1e-6;

/// `z = mu + exp(logvar / 2) ⊙ ε` with `ε ~ N(0, I)`; `logvar` is clamped first.
pub fn reparameterize(mu: &Tensor, logvar: &Tensor, rng: &mut Rng) -> Result<Tensor> {
    let eps = rng.normal_tensor(mu.shape());
    reparameterize_with(mu, logvar, &eps)
}

pub fn reparameterize_with(mu: &Tensor, logvar: &Tensor, eps: &Tensor) -> Result<Tensor> {
    if !mu.same_shape(logvar) || !mu.same_shape(eps) {
        return Err(Error::dim(
            "reparameterize",
            format!("{:?}", mu.shape()),
            format!("{:?} / {:?}", logvar.shape(), eps.shape()),
        ));
    }
    let mut z = mu.clone();
    for ((zv, lv), e) in z.data_mut().iter_mut().zip(logvar.data()).zip(eps.data()) {
        *zv += (0.5 * lv.clamp(LOGVAR_MIN, LOGVAR_MAX)).exp() * e;
    }
    Ok(z)
}

/// Per-row `½ Σ_d (exp(lv) + mu² − 1 − lv)`.
pub fn kl_diag_gaussian_to_standard(mu: &Tensor, logvar: &Tensor) -> Result<Vec<f64>> {
    if !mu.same_shape(logvar) {
        return Err(Error::dim("kl", format!("{:?}", mu.shape()), format!("{:?}", logvar.shape())));
    }
    Ok((0..mu.rows())
        .map(|r| {
            mu.row(r)
                .iter()
                .zip(logvar.row(r))
                .map(|(&m, &l)| {
                    let l = l.clamp(LOGVAR_MIN, LOGVAR_MAX);
                    0.5 * (l.exp() + m * m - 1.0 - l)
                })
                .sum()
        })
        .collect())
}

/// Per-row `−‖x − mu‖² / (2σ²) − (d/2) log(2πσ²)`.
pub fn gaussian_log_likelihood(x: &Tensor, mu: &Tensor, sigma: f64) -> Result<Vec<f64>> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::contract(format!("gaussian sigma must be > 0, got {sigma}")));
    }
    if !x.same_shape(mu) {
        return Err(Error::dim("gaussian_log_likelihood", format!("{:?}", x.shape()), format!("{:?}", mu.shape())));
    }
    let d = x.cols() as f64;
    let c = -0.5 * d * (2.0 * PI * sigma * sigma).ln();
    Ok((0..x.rows())
        .map(|r| {
            let sq: f64 = x.row(r).iter().zip(mu.row(r)).map(|(a, b)| (a - b) * (a - b)).sum();
            c - sq / (2.0 * sigma * sigma)
        })
        .collect())
}

/// Per-row `Σ_d x log p + (1 − x) log(1 − p)` with `p` clamped to `[ε, 1 − ε]`.
pub fn bernoulli_log_likelihood(x: &Tensor, probs: &Tensor) -> Result<Vec<f64>> {
    if !x.same_shape(probs) {
        return Err(Error::dim("bernoulli_log_likelihood", format!("{:?}", x.shape()), format!("{:?}", probs.shape())));
    }
    if let Some(bad) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::contract(format!("bernoulli target {bad} outside [0, 1]")));
    }
    if let Some(bad) = probs.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::contract(format!("bernoulli probability {bad} outside [0, 1]")));
    }
    Ok((0..x.rows())
        .map(|r| {
            x.row(r)
                .iter()
                .zip(probs.row(r))
                .map(|(&xv, &pv)| {
                    let p = pv.clamp(BERNOULLI_EPS, 1.0 - BERNOULLI_EPS);
                    xv * p.ln() + (1.0 - xv) * (1.0 - p).ln()
                })
                .sum()
        })
        .collect())
}
