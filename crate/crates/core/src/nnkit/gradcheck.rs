//! Central finite differences over every named parameter of a model.
//!
//! Only forward evaluations of the loss are used, so the result is an
//! independent reference for gradients produced by the tape.

use std::collections::BTreeMap;

use super::layer::Parameterized;
use super::tape::Gradients;
use super::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `∂f/∂θ` by `(f(θ + h) − f(θ − h)) / 2h` for each scalar parameter.
pub fn numeric_gradients<M: Parameterized + Clone>(
    model: &M,
    h: f64,
    mut f: impl FnMut(&M) -> f64,
) -> BTreeMap<String, Tensor> {
    let mut shapes = Vec::new();
    model.visit_params(&mut |name, t| shapes.push((name.to_string(), t.shape().to_vec())));

    let mut out = BTreeMap::new();
    for (name, shape) in shapes {
        let n: usize = shape.iter().product();
        let mut g = Tensor::zeros(&shape);
        for i in 0..n {
            let mut plus = model.clone();
            nudge(&mut plus, &name, i, h);
            let mut minus = model.clone();
            nudge(&mut minus, &name, i, -h);
            g.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        out.insert(name, g);
    }
    out
}

fn nudge<M: Parameterized>(model: &mut M, name: &str, index: usize, delta: f64) {
    model.visit_params_mut(&mut |n, t| {
        if n == name {
            t.data_mut()[index] += delta;
        }
    });
}

/// `‖a − n‖ / (‖a‖ + ‖n‖)`, or `0` when both are (numerically) zero.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nn = 0.0;
    for (a, n) in analytic.data().iter().zip(numeric.data()) {
        diff += (a - n) * (a - n);
        na += a * a;
        nn += n * n;
    }
    let denom = na.sqrt() + nn.sqrt();
    if denom < 1e-12 {
        diff.sqrt()
    } else {
        diff.sqrt() / denom
    }
}

/// Per-parameter comparison; parameters absent from `analytic` count as zero.
pub fn compare(analytic: &Gradients, numeric: &BTreeMap<String, Tensor>) -> Vec<(String, f64)> {
    numeric
        .iter()
        .map(|(name, n)| {
            let err = match analytic.get(name) {
                Some(a) => relative_error(a, n),
                None => relative_error(&Tensor::zeros(n.shape()), n),
            };
            (name.clone(), err)
        })
        .collect()
}

pub fn max_error(errors: &[(String, f64)]) -> f64 {
    errors.iter().map(|(_, e)| *e).fold(0.0, f64::max)
}
