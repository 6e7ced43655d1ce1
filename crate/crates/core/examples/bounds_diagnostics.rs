//! Replay with the risk-bound diagnostics, printed at every task end.

use degm::bounds::{run_bounds, BoundsConfig};
use degm::data::{synthetic_task, SyntheticKind};
use degm::lifelong::{Task, TaskStream, TrainConfig};
use degm::nnkit::Rng;

fn main() -> degm::Result<()> {
    let mut tasks = Vec::new();
    for (i, (name, kind)) in [("bars", SyntheticKind::Bars), ("stripes", SyntheticKind::Stripes)].into_iter().enumerate() {
        let mut rng = Rng::new(20 + i as u64);
        tasks.push(Task::new(name, synthetic_task(kind, 500, 64, &mut rng)?, synthetic_task(kind, 300, 64, &mut rng)?)?);
    }
    let stream = TaskStream::new(tasks)?;
    let cfg = TrainConfig {
        epochs: 10,
        batch: 32,
        lr: 3e-3,
        hidden_dim: 32,
        latent_dim: 4,
        ..TrainConfig::default()
    };
    let run = run_bounds(&stream, &cfg, &BoundsConfig { samples: 600 })?;
    for r in run.report.task_end_rows() {
        println!(
            "task {}: lhs {:.3}, rhs {:.3}, slack {:.3} ± {:.3}, KL gap {:.4}, discrepancy {:.5}",
            r.task_t, r.lhs, r.rhs, r.slack, r.slack_se, r.kl_gap, r.disc_lower_bound
        );
    }
    Ok(())
}
