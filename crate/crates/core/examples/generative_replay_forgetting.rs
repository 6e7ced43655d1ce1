//! Replay baseline on top/bars/bottom: the first task's risk after each task.

use degm::data::{synthetic_task, SyntheticKind};
use degm::lifelong::{run_gr_single, Task, TaskStream, TrainConfig};
use degm::nnkit::Rng;

fn main() -> degm::Result<()> {
    let mut tasks = Vec::new();
    for (i, (name, kind)) in [
        ("top", SyntheticKind::HalfActiveTop),
        ("bars", SyntheticKind::Bars),
        ("bottom", SyntheticKind::HalfActiveBottom),
    ]
    .into_iter()
    .enumerate()
    {
        let mut rng = Rng::new(i as u64);
        tasks.push(Task::new(name, synthetic_task(kind, 600, 64, &mut rng)?, synthetic_task(kind, 200, 64, &mut rng)?)?);
    }
    let stream = TaskStream::new(tasks)?;
    let cfg = TrainConfig {
        epochs: 20,
        batch: 32,
        lr: 3e-3,
        hidden_dim: 32,
        latent_dim: 4,
        ..TrainConfig::default()
    };
    let run = run_gr_single(&stream, &cfg)?;
    for t in 1..=stream.len() {
        println!("after task {t}: risk on task 1 = {:.5}", run.log.risk_after(t, 1).unwrap_or(f64::NAN));
    }
    for b in &run.replay {
        let mut counts = std::collections::BTreeMap::new();
        for &t in &b.attributed {
            *counts.entry(t + 1).or_insert(0) += 1;
        }
        println!("replay into task {}: {} samples, attributed {counts:?}", b.consumer + 1, b.samples.rows());
    }
    Ok(())
}
