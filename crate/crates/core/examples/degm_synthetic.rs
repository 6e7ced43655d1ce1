//! Runs the expansion graph on three synthetic tasks and prints each decision.

use degm::data::{synthetic_task, SyntheticKind};
use degm::lifelong::{run_degm, Task, TaskStream, TrainConfig};
use degm::nnkit::Rng;

fn task(name: &str, kind: SyntheticKind, seed: u64) -> degm::Result<Task> {
    let mut rng = Rng::new(seed);
    let train = synthetic_task(kind, 600, 64, &mut rng)?;
    let test = synthetic_task(kind, 200, 64, &mut rng)?;
    Task::new(name, train, test)
}

fn main() -> degm::Result<()> {
    let stream = TaskStream::new(vec![
        task("top-a", SyntheticKind::HalfActiveTop, 1)?,
        task("top-b", SyntheticKind::HalfActiveTop, 2)?,
        task("bottom", SyntheticKind::HalfActiveBottom, 3)?,
    ])?;
    let tau = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(25.0);
    let cfg = TrainConfig {
        epochs: 20,
        batch: 32,
        lr: 3e-3,
        tau: Some(tau),
        hidden_dim: 32,
        latent_dim: 4,
        probe_size: 200,
        ..TrainConfig::default()
    };
    let run = run_degm(&stream, &cfg)?;
    for e in &run.expansions {
        let kind = if e.basic { "basic" } else { "specific" };
        println!("task {} ({}): scores {:?} -> {kind}, weights {:?}", e.task_id, e.task_name, e.scores, e.weights);
    }
    run.graph.write_v_csv(std::io::stdout())?;
    Ok(())
}
