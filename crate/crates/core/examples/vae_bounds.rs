//! Trains one VAE on bars and shows the IWELBO tightening with K'.

use degm::bounds::mean_se;
use degm::data::{synthetic_task, SyntheticKind};
use degm::lifelong::{run_gr_single, Task, TaskStream, TrainConfig};
use degm::nnkit::Rng;

fn main() -> degm::Result<()> {
    let mut rng = Rng::new(0);
    let train = synthetic_task(SyntheticKind::Bars, 1000, 64, &mut rng)?;
    let test = synthetic_task(SyntheticKind::Bars, 2000, 64, &mut rng)?;
    let stream = TaskStream::new(vec![Task::new("bars", train, test.clone())?])?;
    let cfg = TrainConfig {
        epochs: 30,
        batch: 32,
        lr: 3e-3,
        hidden_dim: 32,
        latent_dim: 4,
        ..TrainConfig::default()
    };
    let model = run_gr_single(&stream, &cfg)?.model;
    for k in [1, 5, 50] {
        let (m, se) = mean_se(&model.iwelbo(&test.data, k, &mut Rng::new(k as u64))?);
        println!("K' = {k:>2}: mean bound {m:.4} ± {se:.4}");
    }
    Ok(())
}
