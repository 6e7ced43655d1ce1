//! Monte-Carlo properties of the bounds, selection and discrepancy estimators.

mod common;

use common::{small_cfg, stream, synthetic, task};
use degm::bounds::{estimate_discrepancy, estimate_kl_gap, mean_se, HypothesisSet};
use degm::data::SyntheticKind;
use degm::lifelong::{run_degm, run_gr_single};
use degm::nnkit::{Rng, Tensor};
use degm::select_eval::{eval_nll, evaluate_model, select_components};

#[test]
fn importance_sampling_tightens_the_bound() {
    let s = stream(vec![task("bars", SyntheticKind::Bars, 400, 10, 36, 1)]);
    let m = run_gr_single(&s, &small_cfg(0)).unwrap().model;
    let x = synthetic(SyntheticKind::Bars, 2000, 36, &mut Rng::new(2)).data;
    let (b1, se1) = mean_se(&m.iwelbo(&x, 1, &mut Rng::new(3)).unwrap());
    let (b50, se50) = mean_se(&m.iwelbo(&x, 50, &mut Rng::new(4)).unwrap());
    assert!(b50 >= b1 - 3.0 * (se1 * se1 + se50 * se50).sqrt(), "{b1} {b50}");
}

#[test]
fn graph_nll_matches_owner_model_with_one_node() {
    let s = stream(vec![task("bars", SyntheticKind::Bars, 300, 60, 36, 5)]);
    let mut cfg = small_cfg(0);
    cfg.tau = Some(1.0);
    let run = run_degm(&s, &cfg).unwrap();
    let g = eval_nll(&run.graph, &s.tasks[0].test.data, 20, 0).unwrap();
    assert!(g.chosen.iter().all(|&c| c == 0));
    assert!(g.mean.is_finite() && g.se > 0.0);
    let per_task = evaluate_model(&run.graph.basics[0].vae, &s, 20, 0).unwrap();
    assert!((per_task[0].record.nll - g.mean).abs() < 5.0 * g.se + 1e-9);
}

#[test]
fn selection_prefers_the_matching_node() {
    let s = stream(vec![
        task("top", SyntheticKind::HalfActiveTop, 300, 100, 36, 7),
        task("bottom", SyntheticKind::HalfActiveBottom, 300, 100, 36, 8),
    ]);
    let mut cfg = small_cfg(0);
    cfg.tau = Some(1e-12);
    let run = run_degm(&s, &cfg).unwrap();
    for (i, t) in s.tasks.iter().enumerate() {
        let sel = select_components(&run.graph, &t.test.data, 1, 0).unwrap();
        let acc = sel.iter().filter(|r| r.chosen == i).count() as f64 / sel.len() as f64;
        assert!(acc > 0.9, "{}: {acc}", t.name);
        assert!(sel.iter().all(|r| (r.posterior.iter().sum::<f64>() - 1.0).abs() < 1e-12));
    }
}

#[test]
fn discrepancy_is_zero_on_identical_samples_and_positive_between_tasks() {
    let a = task("bars", SyntheticKind::Bars, 300, 100, 36, 9);
    let b = task("stripes", SyntheticKind::Stripes, 300, 100, 36, 10);
    let ma = run_gr_single(&stream(vec![a.clone()]), &small_cfg(0)).unwrap().model;
    let mb = run_gr_single(&stream(vec![b.clone()]), &small_cfg(1)).unwrap().model;
    let mut set = HypothesisSet::new();
    set.register("a", &ma);
    set.register("b", &mb);
    assert_eq!(estimate_discrepancy(&a.test.data, &a.test.data, &set).unwrap().lower_bound, 0.0);
    assert!(estimate_discrepancy(&a.test.data, &b.test.data, &set).unwrap().lower_bound > 0.0);
}

#[test]
fn kl_gap_vanishes_when_source_matches_the_targets() {
    let a = task("bars", SyntheticKind::Bars, 400, 300, 36, 11);
    let m = run_gr_single(&stream(vec![a.clone()]), &small_cfg(0)).unwrap().model;
    let fresh = synthetic(SyntheticKind::Bars, 300, 36, &mut Rng::new(12)).data;
    let same = estimate_kl_gap(&m, &[&a.test.data], &fresh).unwrap();
    assert!(same.gap.abs() <= 3.0 * same.se + 1e-12, "{same:?}");
    let other = synthetic(SyntheticKind::Stripes, 300, 36, &mut Rng::new(13)).data;
    let far = estimate_kl_gap(&m, &[&a.test.data], &other).unwrap();
    assert!(far.gap.abs() > 3.0 * far.se, "{far:?}");
}

#[test]
fn eval_nll_is_invariant_to_row_order() {
    let s = stream(vec![task("bars", SyntheticKind::Bars, 200, 50, 36, 14)]);
    let mut cfg = small_cfg(0);
    cfg.tau = Some(1.0);
    let g = run_degm(&s, &cfg).unwrap().graph;
    let x = &s.tasks[0].test.data;
    let rev: Vec<usize> = (0..x.rows()).rev().collect();
    let xr: Tensor = x.select_rows(&rev);
    let a = eval_nll(&g, x, 5, 3).unwrap();
    let b = eval_nll(&g, &xr, 5, 3).unwrap();
    assert_eq!(a.per_row.iter().rev().copied().collect::<Vec<_>>(), b.per_row);
}
