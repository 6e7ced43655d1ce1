use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use degm::cli::{self, ExperimentConfig};
use degm::data::SyntheticKind;
use degm::Result;

#[derive(Parser)]
#[command(name = "degm", about = "Lifelong generative modelling with a dynamic expansion graph of VAEs")]
struct Args {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root for train/ablate, output file for eval/export-v.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training draws for train, evaluation draws for eval.
    #[arg(long)]
    kprime: Option<usize>,
    /// Pool image sources 2×2 before training.
    #[arg(long)]
    desk_scale: bool,
}

#[derive(Subcommand)]
enum Verb {
    /// Train the configured experiment into <out>/<config-hash>/.
    Train(Common),
    /// Evaluate a run's checkpoint on its stream.
    Eval {
        run: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Re-run a run's replay learner with bound diagnostics.
    Diagnose { run: PathBuf },
    /// Write a run's adjacency matrix as CSV.
    ExportV {
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare edge-weight variants on the configured stream.
    Ablate(Common),
    /// Write one synthetic task as IDX files.
    GenSynthetic {
        /// bars, stripes, half-active-top, half-active-bottom, gauss-blob or glyphs.
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 1000)]
        n_train: usize,
        #[arg(long, default_value_t = 200)]
        n_test: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Path prefix of the written files.
        #[arg(long)]
        out: PathBuf,
    },
}

fn configured(common: &Common, fallback: Option<&Path>) -> Result<ExperimentConfig> {
    let path = match (&common.config, fallback) {
        (Some(p), _) => p.clone(),
        (None, Some(run)) => run.join(cli::CONFIG_FILE),
        (None, None) => return Err(degm::Error::Config {
            path: "--config".into(),
            message: "a config file is required".into(),
        }),
    };
    let mut cfg = cli::load_config(&path)?;
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    if common.desk_scale {
        cfg.desk_scale = true;
    }
    Ok(cfg)
}

fn run(args: Args) -> Result<()> {
    match args.verb {
        Verb::Train(common) => {
            let mut cfg = configured(&common, None)?;
            if let Some(k) = common.kprime {
                cfg.train.kprime = k;
            }
            if let Some(out) = common.out {
                cfg.out = out;
            }
            cfg.validate()?;
            let outcome = cli::cmd_train(&cfg)?;
            println!("{}", outcome.dir.display());
            println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
        }
        Verb::Eval { run, common } => {
            let cfg = configured(&common, Some(&run))?;
            let k = common.kprime.unwrap_or(cfg.train.eval_kprime);
            let out = common.out.unwrap_or_else(|| run.join("eval.csv"));
            let rows = cli::cmd_eval(&run, &cfg, k, cfg.train.seed, &out)?;
            for r in rows {
                println!(
                    "{}\tnll {:.4}\tsl {:.4}\tpsnr {:.2}\tssim {:.4}",
                    r.task, r.record.nll, r.record.sl, r.record.psnr, r.record.ssim
                );
            }
            println!("{}", out.display());
        }
        Verb::Diagnose { run } => {
            let report = cli::cmd_diagnose(&run)?;
            for r in report.task_end_rows() {
                println!("task {}\tslack {:.4} ± {:.4}\tdisc {:.5}", r.task_t, r.slack, r.slack_se, r.disc_lower_bound);
            }
            println!("{}", run.join("bounds_report.csv").display());
        }
        Verb::ExportV { run, out } => {
            let out = out.unwrap_or_else(|| run.join("v_matrix.csv"));
            cli::cmd_export_v(&run, &out)?;
            println!("{}", out.display());
        }
        Verb::Ablate(common) => {
            let mut cfg = configured(&common, None)?;
            if let Some(out) = common.out {
                cfg.out = out;
            }
            let (dir, table) = cli::run_ablation(&cfg)?;
            for c in &table.columns {
                let mean = c.final_risk.iter().sum::<f64>() / c.final_risk.len() as f64;
                println!("{}\tmean risk {:.5}\t{} basic, {} specific", c.variant, mean, c.basic_nodes, c.specific_nodes);
            }
            println!("{}", dir.join("ablation.csv").display());
        }
        Verb::GenSynthetic {
            kind,
            n_train,
            n_test,
            dim,
            seed,
            out,
        } => {
            let kind = SyntheticKind::parse(&kind)?;
            for p in cli::gen_synthetic(kind, n_train, n_test, dim, seed, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
