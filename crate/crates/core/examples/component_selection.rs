//! Two disjoint tasks become two basic nodes; held-out samples are routed
//! back to their own node.

use degm::data::{synthetic_task, SyntheticKind};
use degm::lifelong::{run_degm, Task, TaskStream, TrainConfig};
use degm::nnkit::Rng;
use degm::select_eval::{eval_nll, select_components};

fn main() -> degm::Result<()> {
    let mut tasks = Vec::new();
    for (i, (name, kind)) in [("top", SyntheticKind::HalfActiveTop), ("bottom", SyntheticKind::HalfActiveBottom)]
        .into_iter()
        .enumerate()
    {
        let mut rng = Rng::new(10 + i as u64);
        tasks.push(Task::new(name, synthetic_task(kind, 600, 64, &mut rng)?, synthetic_task(kind, 300, 64, &mut rng)?)?);
    }
    let stream = TaskStream::new(tasks)?;
    let cfg = TrainConfig {
        epochs: 20,
        batch: 32,
        lr: 3e-3,
        tau: Some(1e-12),
        hidden_dim: 32,
        latent_dim: 4,
        probe_size: 200,
        ..TrainConfig::default()
    };
    let run = run_degm(&stream, &cfg)?;
    for (i, task) in stream.tasks.iter().enumerate() {
        let sel = select_components(&run.graph, &task.test.data, 1, 0)?;
        let hits = sel.iter().filter(|s| s.chosen == i).count();
        let nll = eval_nll(&run.graph, &task.test.data, 10, 0)?;
        println!(
            "{}: {hits}/{} routed to node {i}, NLL {:.3} ± {:.3}",
            task.name,
            sel.len(),
            nll.mean,
            nll.se
        );
    }
    Ok(())
}
