//! Saves a trained graph, reloads it, and checks evaluation is unchanged.

use degm::cli::{load_checkpoint, save_checkpoint, Model};
use degm::data::{synthetic_task, SyntheticKind};
use degm::lifelong::{run_degm, Task, TaskStream, TrainConfig};
use degm::nnkit::Rng;
use degm::select_eval::eval_nll;

fn main() -> degm::Result<()> {
    let mut rng = Rng::new(5);
    let a = Task::new("bars", synthetic_task(SyntheticKind::Bars, 300, 64, &mut rng)?, synthetic_task(SyntheticKind::Bars, 100, 64, &mut rng)?)?;
    let b = Task::new("stripes", synthetic_task(SyntheticKind::Stripes, 300, 64, &mut rng)?, synthetic_task(SyntheticKind::Stripes, 100, 64, &mut rng)?)?;
    let stream = TaskStream::new(vec![a, b])?;
    let cfg = TrainConfig {
        epochs: 5,
        batch: 32,
        lr: 3e-3,
        tau: Some(1e12),
        hidden_dim: 16,
        latent_dim: 4,
        probe_size: 100,
        ..TrainConfig::default()
    };
    let g = run_degm(&stream, &cfg)?.graph;
    let dir = std::env::temp_dir().join("degm-checkpoint-example");
    save_checkpoint(&Model::Graph(g.clone()), &dir, "example")?;
    let Model::Graph(back) = load_checkpoint(&dir)?.0 else {
        unreachable!("a graph was saved")
    };
    let x = &stream.tasks[1].test.data;
    let (before, after) = (eval_nll(&g, x, 10, 0)?, eval_nll(&back, x, 10, 0)?);
    println!("NLL before {:.6}, after {:.6}, identical {}", before.mean, after.mean, before.per_row == after.per_row);
    println!("nodes {}, V rows {:?}", back.len(), back.v_matrix());
    Ok(())
}
