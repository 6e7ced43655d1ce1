//! Every edge-weight variant on one stream, written as a table to stdout.

use degm::cli::{parse_config, run_ablation};

fn main() -> degm::Result<()> {
    let mut cfg = parse_config(include_str!("../configs/ablation_synthetic.json"))?;
    cfg.train.epochs = 10;
    cfg.out = std::env::temp_dir().join("degm-ablation-example");
    let (dir, table) = run_ablation(&cfg)?;
    table.write_csv(std::io::stdout())?;
    println!("written to {}", dir.display());
    Ok(())
}
