#![allow(dead_code)]

pub mod grad;

use std::collections::BTreeMap;

use degm::data::{synthetic_task, Dataset, SyntheticKind};
use degm::lifelong::{Task, TaskStream, TrainConfig};
use degm::nnkit::{Parameterized, Rng, Tensor};

/// Free-standing named tensors, for checking raw tape operations.
#[derive(Clone, Debug)]
pub struct NamedParams(pub BTreeMap<String, Tensor>);

impl Parameterized for NamedParams {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (n, t) in &self.0 {
            f(n, t);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (n, t) in self.0.iter_mut() {
            f(n, t);
        }
    }
}

pub fn synthetic(kind: SyntheticKind, n: usize, dim: usize, rng: &mut Rng) -> Dataset {
    synthetic_task(kind, n, dim, rng).unwrap()
}

pub fn task(name: &str, kind: SyntheticKind, n_train: usize, n_test: usize, dim: usize, seed: u64) -> Task {
    let mut rng = Rng::new(seed);
    let train = synthetic(kind, n_train, dim, &mut rng);
    let test = synthetic(kind, n_test, dim, &mut rng);
    Task::new(name, train, test).unwrap()
}

pub fn stream(tasks: Vec<Task>) -> TaskStream {
    TaskStream::new(tasks).unwrap()
}

pub fn small_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 10,
        batch: 32,
        lr: 3e-3,
        hidden_dim: 16,
        latent_dim: 4,
        probe_size: 64,
        seed,
        ..TrainConfig::default()
    }
}
