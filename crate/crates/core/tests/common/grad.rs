//! Finite-difference checks shared by the gradient tests and the acceptance run.

use std::collections::BTreeMap;

use degm::graph::{BasicNode, GraphModel, SpecificNode};
use degm::nnkit::gradcheck::{compare, max_error, numeric_gradients, DEFAULT_STEP};
use degm::nnkit::{Rng, Tape, Tensor, Var};
use degm::vae::{GenerativeModel, Likelihood, VaeComponent, VaeShape};

use super::NamedParams;

pub const TOL: f64 = 1e-4;
pub const TIGHT: f64 = 1e-6;

pub fn data(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.uniform()).collect()).unwrap()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Worst relative error of `−mean(bound)` for a generative model.
pub fn model_error<M: GenerativeModel>(m: &M, x: &Tensor, k: usize, seed: u64) -> f64 {
    let mut tape = Tape::new();
    let obj = m.objective_on(&mut tape, x, k, &mut Rng::new(seed)).unwrap();
    let mean_obj = tape.mean(obj);
    let loss = tape.scale(mean_obj, -1.0);
    let grads = tape.backprop(loss).unwrap();
    let numeric = numeric_gradients(m, DEFAULT_STEP, |mm| -mean(&mm.iwelbo(x, k, &mut Rng::new(seed)).unwrap()));
    max_error(&compare(&grads, &numeric))
}

pub fn vae(lik: Likelihood, seed: u64) -> VaeComponent {
    VaeComponent::new(VaeShape::new(6, 5, 3).unwrap(), lik, &mut Rng::new(seed)).unwrap()
}

pub fn two_basic_graph() -> GraphModel {
    let mut g = GraphModel::new(1.0).unwrap();
    for i in 0..2 {
        g.add_basic_node(BasicNode {
            vae: vae(Likelihood::Bernoulli, 10 + i),
            task_id: i as usize + 1,
            task_name: format!("t{i}"),
            reference_elbo: None,
        })
        .unwrap();
    }
    g
}

pub fn melbo_error(k: usize) -> f64 {
    let g = two_basic_graph();
    let s = SpecificNode::new(&g, vec![0.3, 0.7], 3, "t2", &mut Rng::new(12)).unwrap();
    let x = data(4, 6, 13);
    let eps: Vec<Tensor> = (0..k).map(|j| Rng::new(14 + j as u64).normal_tensor(&[4, 3])).collect();
    let mut tape = Tape::new();
    let obj = g.melbo_iw_on(&mut tape, &s, &x, eps.clone(), true).unwrap();
    let m = tape.mean(obj);
    let loss = tape.scale(m, -1.0);
    let grads = tape.backprop(loss).unwrap();
    let numeric = numeric_gradients(&s, DEFAULT_STEP, |ss| -mean(&g.melbo_iw_with_noise(ss, &x, &eps).unwrap()));
    assert_eq!(grads.len(), 4, "only the two new layers train");
    max_error(&compare(&grads, &numeric))
}

pub type Build = dyn Fn(&mut Tape, &BTreeMap<String, Var>) -> Var;

/// Error of `Σ c ⊙ op(params)` with a fixed random weighting `c`.
pub fn op_error(params: NamedParams, build: &Build) -> f64 {
    let forward = |p: &NamedParams, tape: &mut Tape| -> Var {
        let vars: BTreeMap<String, Var> = p.0.iter().map(|(n, t)| (n.clone(), tape.param(n, t))).collect();
        let out = build(tape, &vars);
        let shape = tape.value(out).shape().to_vec();
        let c = tape.constant(Rng::new(99).normal_tensor(&shape));
        let weighted = tape.mul(out, c).unwrap();
        tape.sum(weighted)
    };
    let mut tape = Tape::new();
    let loss = forward(&params, &mut tape);
    let grads = tape.backprop(loss).unwrap();
    let numeric = numeric_gradients(&params, DEFAULT_STEP, |p| {
        let mut t = Tape::new();
        let l = forward(p, &mut t);
        t.value(l).item()
    });
    max_error(&compare(&grads, &numeric))
}

pub fn params(spec: &[(&str, &[usize])], seed: u64) -> NamedParams {
    let mut rng = Rng::new(seed);
    NamedParams(spec.iter().map(|(n, s)| (n.to_string(), rng.normal_tensor(s))).collect())
}

