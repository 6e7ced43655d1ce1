//! Accumulated final risk of the graph and the replay baseline under several
//! task orders.

use degm::data::{synthetic_task, SyntheticKind};
use degm::lifelong::{order_experiment, Task, TaskStream, TrainConfig};
use degm::nnkit::Rng;

fn main() -> degm::Result<()> {
    let kinds = [("bars", SyntheticKind::Bars), ("stripes", SyntheticKind::Stripes), ("top", SyntheticKind::HalfActiveTop)];
    let mut tasks = Vec::new();
    for (i, (name, kind)) in kinds.into_iter().enumerate() {
        let mut rng = Rng::new(30 + i as u64);
        tasks.push(Task::new(name, synthetic_task(kind, 400, 64, &mut rng)?, synthetic_task(kind, 200, 64, &mut rng)?)?);
    }
    let stream = TaskStream::new(tasks)?;
    let names = stream.names();
    let orders = vec![names.clone(), names.iter().rev().cloned().collect()];
    let cfg = TrainConfig {
        epochs: 10,
        batch: 32,
        lr: 3e-3,
        tau: Some(1e-12),
        hidden_dim: 32,
        latent_dim: 4,
        probe_size: 200,
        ..TrainConfig::default()
    };
    order_experiment(&stream, &orders, &cfg)?.write_csv(std::io::stdout())
}
