//! Tape gradients against central finite differences for every bound and
//! for each primitive operation.

mod common;

use std::collections::BTreeMap;

use common::grad::{data, melbo_error, model_error, op_error, params, vae, TIGHT, TOL};
use degm::nnkit::{Activation, Rng, Tape, Var};
use degm::vae::{HierShape, HierVae, Likelihood, VaeShape};

#[test]
fn elbo_gradients_match() {
    let x = data(4, 6, 1);
    assert!(model_error(&vae(Likelihood::Bernoulli, 2), &x, 1, 3) < TOL);
    assert!(model_error(&vae(Likelihood::unit_square_loss_gaussian(), 2), &x, 1, 3) < TOL);
}

#[test]
fn iwelbo_gradients_match() {
    let x = data(4, 6, 4);
    assert!(model_error(&vae(Likelihood::Bernoulli, 5), &x, 5, 6) < TOL);
    assert!(model_error(&vae(Likelihood::unit_square_loss_gaussian(), 5), &x, 3, 6) < TOL);
}

#[test]
fn hier_elbo_gradients_match() {
    let shape = HierShape {
        base: VaeShape::new(6, 5, 4).unwrap(),
        hidden2: 4,
        latent2: 2,
    };
    let h = HierVae::new(shape, Likelihood::Bernoulli, &mut Rng::new(7)).unwrap();
    let x = data(3, 6, 8);
    assert!(model_error(&h, &x, 1, 9) < TOL);
    assert!(model_error(&h, &x, 4, 9) < TOL);
}

#[test]
fn melbo_gradients_match() {
    assert!(melbo_error(1) < TOL);
}

#[test]
fn melbo_iw_gradients_match() {
    assert!(melbo_error(4) < TOL);
}

// ---- primitive operations ----

#[test]
fn affine_and_two_layer_are_tight() {
    let p = params(&[("x", &[3, 4]), ("w", &[5, 4]), ("b", &[5])], 1);
    assert!(op_error(p, &|t, v| t.affine(v["x"], v["w"], v["b"]).unwrap()) < TIGHT);
    let p = params(&[("x", &[3, 4]), ("w1", &[5, 4]), ("b1", &[5]), ("w2", &[2, 5]), ("b2", &[2])], 2);
    let two = |t: &mut Tape, v: &BTreeMap<String, Var>| {
        let h = t.affine(v["x"], v["w1"], v["b1"]).unwrap();
        let h = t.activation(h, Activation::Tanh);
        t.affine(h, v["w2"], v["b2"]).unwrap()
    };
    assert!(op_error(p, &two) < TIGHT);
}

#[test]
fn activations_match() {
    for kind in [Activation::LeakyRelu, Activation::Tanh, Activation::Sigmoid] {
        let p = params(&[("x", &[4, 3])], 3);
        assert!(op_error(p, &move |t, v| t.activation(v["x"], kind)) < TOL, "{kind:?}");
    }
}

#[test]
fn elementwise_ops_match() {
    let ab = || params(&[("a", &[3, 2]), ("b", &[3, 2])], 4);
    assert!(op_error(ab(), &|t, v| t.add(v["a"], v["b"]).unwrap()) < TOL);
    assert!(op_error(ab(), &|t, v| t.sub(v["a"], v["b"]).unwrap()) < TOL);
    assert!(op_error(ab(), &|t, v| t.mul(v["a"], v["b"]).unwrap()) < TOL);
    assert!(op_error(ab(), &|t, v| t.scale(v["a"], -2.5)) < TOL);
    assert!(op_error(ab(), &|t, v| t.exp(v["a"], 0.5)) < TOL);
    assert!(op_error(ab(), &|t, v| t.weighted_sum(&[v["a"], v["b"]], &[0.25, 0.75]).unwrap()) < TOL);
    assert!(op_error(ab(), &|t, v| t.clamp_logvar(v["a"])) < TOL);
    assert!(op_error(ab(), &|t, v| t.log_mean_exp(&[v["a"], v["b"]]).unwrap()) < TOL);
    assert!(op_error(ab(), &|t, v| {
        let s = t.sum(v["a"]);
        let m = t.mean(v["b"]);
        t.add(s, m).unwrap()
    }) < TOL);
}

#[test]
fn density_ops_match() {
    let eps = Rng::new(5).normal_tensor(&[3, 2]);
    let p = params(&[("mu", &[3, 2]), ("lv", &[3, 2])], 6);
    assert!(op_error(p.clone(), &move |t, v| t.reparameterize(v["mu"], v["lv"], eps.clone()).unwrap()) < TOL);
    assert!(op_error(p, &|t, v| t.kl_std(v["mu"], v["lv"]).unwrap()) < TOL);
    let p = params(&[("z", &[3, 2]), ("m", &[3, 2]), ("lv", &[3, 2])], 7);
    assert!(op_error(p.clone(), &|t, v| t.log_normal(v["z"], v["m"], v["lv"]).unwrap()) < TOL);
    assert!(op_error(p.clone(), &|t, v| {
        let sd = t.exp(v["lv"], 0.5);
        t.log_normal_std(v["z"], v["m"], sd).unwrap()
    }) < TOL);
    assert!(op_error(p, &|t, v| t.log_std_normal(v["z"])) < TOL);
}

#[test]
fn likelihood_ops_match() {
    let x = data(3, 4, 8);
    let p = params(&[("m", &[3, 4])], 9);
    let xg = x.clone();
    assert!(op_error(p.clone(), &move |t, v| t.gaussian_ll(&xg, v["m"], 0.7).unwrap()) < TOL);
    assert!(op_error(p, &move |t, v| {
        let probs = t.activation(v["m"], Activation::Sigmoid);
        t.bernoulli_ll(&x, probs).unwrap()
    }) < TOL);
}
