use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::{accumulated_error_proxy, run_bounds, BoundsReport, ChainTerm};
use crate::data::{save_idx, synthetic_task, SyntheticKind};
use crate::error::{Error, Result};
use crate::lifelong::{final_risks, order_experiment, run_degm, run_gr_hier, run_gr_single, ExpansionRecord, MetricsLog};
use crate::nnkit::Rng;
use crate::select_eval::{evaluate_graph, evaluate_model, write_metrics_csv, TaskMetrics};

use super::checkpoint::{load_checkpoint, save_checkpoint, Model};
use super::config::{load_config, Ablation, ExperimentConfig, Mode};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub nll: f64,
    pub sl: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub mode: Mode,
    pub tasks: Vec<String>,
    /// Final test risk per task, in stream order.
    pub final_risk: Vec<f64>,
    pub final_risk_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basic_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specific_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricMeans>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expansions: Option<Vec<ExpansionRecord>>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: Summary,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// CSV produced by `render` with a trailing `config_hash` column.
fn with_hash(hash: &str, render: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    render(&mut raw)?;
    let mut rd = csv::Reader::from_reader(raw.as_slice());
    let mut out = csv::Writer::from_writer(Vec::new());
    let mut header = rd.headers()?.clone();
    header.push_field("config_hash");
    out.write_record(&header)?;
    for rec in rd.records() {
        let mut rec = rec?;
        rec.push_field(hash);
        out.write_record(&rec)?;
    }
    out.into_inner().map_err(|e| Error::contract(format!("csv buffer: {e}")))
}

fn means(rows: &[TaskMetrics]) -> MetricMeans {
    let n = rows.len().max(1) as f64;
    let f = |g: fn(&TaskMetrics) -> f64| rows.iter().map(g).sum::<f64>() / n;
    MetricMeans {
        nll: f(|r| r.record.nll),
        sl: f(|r| r.record.sl),
        psnr: f(|r| r.record.psnr),
        ssim: f(|r| r.record.ssim),
    }
}

fn save_log(log: &mut MetricsLog, hash: &str, dir: &Path) -> Result<()> {
    log.set_run_id(hash);
    log.save_csv(&dir.join("metrics.csv"))
}

fn save_table(rows: &[TaskMetrics], hash: &str, path: &Path) -> Result<()> {
    write_file(path, &with_hash(hash, |w| write_metrics_csv(rows, w))?)
}

fn save_chain(chain: &[ChainTerm], hash: &str, path: &Path) -> Result<()> {
    let bytes = with_hash(hash, |w| {
        let mut out = csv::Writer::from_writer(w);
        for c in chain {
            out.serialize(c)?;
        }
        out.flush().map_err(|e| Error::io("<replay chain>", e))
    })?;
    write_file(path, &bytes)
}

fn save_bounds(report: &BoundsReport, hash: &str, dir: &Path) -> Result<()> {
    write_file(&dir.join("bounds_report.csv"), &with_hash(hash, |w| report.write_csv(w))?)
}

/// Trains the configured experiment and writes every artefact under
/// `<out>/<config-hash>/`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let hash = cfg.hash();
    let dir = cfg.run_dir();
    write_file(&dir.join(CONFIG_FILE), cfg.to_json().as_bytes())?;
    let stream = cfg.stream()?;
    let train = cfg.effective_train();
    let ckpt = dir.join(CHECKPOINT_DIR);
    let mut summary = Summary {
        config_hash: hash.clone(),
        mode: cfg.mode,
        tasks: stream.names(),
        final_risk: Vec::new(),
        final_risk_mean: f64::NAN,
        basic_nodes: None,
        specific_nodes: None,
        metrics: None,
        expansions: None,
    };
    let table;
    match cfg.mode {
        Mode::Degm | Mode::Ablation => {
            let mut run = run_degm(&stream, &train)?;
            save_log(&mut run.log, &hash, &dir)?;
            run.graph.save_v_csv(&dir.join("v_matrix.csv"))?;
            save_checkpoint(&Model::Graph(run.graph.clone()), &ckpt, &hash)?;
            table = evaluate_graph(&run.graph, &stream, train.eval_kprime, train.seed)?;
            summary.final_risk = final_risks(&run.log, stream.len());
            summary.basic_nodes = Some(run.graph.basics.len());
            summary.specific_nodes = Some(run.graph.specifics.len());
            summary.expansions = Some(run.expansions);
        }
        Mode::Gr => {
            let mut run = run_gr_single(&stream, &train)?;
            save_log(&mut run.log, &hash, &dir)?;
            save_checkpoint(&Model::Single(run.model.clone()), &ckpt, &hash)?;
            save_chain(&accumulated_error_proxy(&run, &stream)?, &hash, &dir.join("replay_chain.csv"))?;
            table = evaluate_model(&run.model, &stream, train.eval_kprime, train.seed)?;
            summary.final_risk = final_risks(&run.log, stream.len());
        }
        Mode::GrHier => {
            let mut run = run_gr_hier(&stream, &train)?;
            save_log(&mut run.log, &hash, &dir)?;
            save_checkpoint(&Model::Hier(run.model.clone()), &ckpt, &hash)?;
            table = evaluate_model(&run.model, &stream, train.eval_kprime, train.seed)?;
            summary.final_risk = final_risks(&run.log, stream.len());
        }
        Mode::Bounds => {
            let mut run = run_bounds(&stream, &train, &cfg.bounds)?;
            save_log(&mut run.gr.log, &hash, &dir)?;
            save_bounds(&run.report, &hash, &dir)?;
            save_chain(&accumulated_error_proxy(&run.gr, &stream)?, &hash, &dir.join("replay_chain.csv"))?;
            save_checkpoint(&Model::Single(run.gr.model.clone()), &ckpt, &hash)?;
            table = evaluate_model(&run.gr.model, &stream, train.eval_kprime, train.seed)?;
            summary.final_risk = final_risks(&run.gr.log, stream.len());
        }
        Mode::OrderStudy => {
            let report = order_experiment(&stream, &cfg.orders(), &train)?;
            write_file(&dir.join("order_study.csv"), &with_hash(&hash, |w| report.write_csv(w))?)?;
            let first = &report.rows[0];
            summary.final_risk = first.degm_risks.clone();
            table = Vec::new();
        }
    }
    if !table.is_empty() {
        save_table(&table, &hash, &dir.join("eval.csv"))?;
        summary.metrics = Some(means(&table));
    }
    summary.final_risk_mean = summary.final_risk.iter().sum::<f64>() / summary.final_risk.len().max(1) as f64;
    write_file(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(RunOutcome { dir, summary })
}

/// Run directory config, as written by [`cmd_train`].
pub fn run_config(run_dir: &Path) -> Result<ExperimentConfig> {
    load_config(&run_dir.join(CONFIG_FILE))
}

/// Test-set metrics of a saved model on the configured stream.
pub fn cmd_eval(run_dir: &Path, cfg: &ExperimentConfig, kprime: usize, seed: u64, out: &Path) -> Result<Vec<TaskMetrics>> {
    let (model, hash) = load_checkpoint(&run_dir.join(CHECKPOINT_DIR))?;
    let stream = cfg.stream()?;
    let rows = match &model {
        Model::Graph(g) => evaluate_graph(g, &stream, kprime, seed)?,
        Model::Single(v) => evaluate_model(v, &stream, kprime, seed)?,
        Model::Hier(h) => evaluate_model(h, &stream, kprime, seed)?,
    };
    save_table(&rows, &hash, out)?;
    Ok(rows)
}

/// Deterministically re-runs the replay learner of a run with an auxiliary
/// model and writes the bound diagnostics next to the run.
pub fn cmd_diagnose(run_dir: &Path) -> Result<BoundsReport> {
    let cfg = run_config(run_dir)?;
    let stream = cfg.stream()?;
    let run = run_bounds(&stream, &cfg.effective_train(), &cfg.bounds)?;
    let hash = cfg.hash();
    save_bounds(&run.report, &hash, run_dir)?;
    save_chain(&accumulated_error_proxy(&run.gr, &stream)?, &hash, &run_dir.join("replay_chain.csv"))?;
    Ok(run.report)
}

pub fn cmd_export_v(run_dir: &Path, out: &Path) -> Result<()> {
    match load_checkpoint(&run_dir.join(CHECKPOINT_DIR))?.0 {
        Model::Graph(g) => {
            let mut buf = Vec::new();
            g.write_v_csv(&mut buf)?;
            write_file(out, &buf)
        }
        m => Err(Error::contract(format!("a {} checkpoint has no adjacency matrix", m.kind()))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationColumn {
    pub variant: String,
    pub final_risk: Vec<f64>,
    pub basic_nodes: usize,
    pub specific_nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub tasks: Vec<String>,
    pub columns: Vec<AblationColumn>,
}

impl AblationTable {
    pub fn write_csv(&self, w: impl std::io::Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["task".to_string()];
        header.extend(self.columns.iter().map(|c| c.variant.clone()));
        out.write_record(&header)?;
        for (i, t) in self.tasks.iter().enumerate() {
            let mut rec = vec![t.clone()];
            rec.extend(self.columns.iter().map(|c| c.final_risk[i].to_string()));
            out.write_record(&rec)?;
        }
        let mut avg = vec!["mean".to_string()];
        avg.extend(self.columns.iter().map(|c| (c.final_risk.iter().sum::<f64>() / c.final_risk.len() as f64).to_string()));
        out.write_record(&avg)?;
        out.flush().map_err(|e| Error::io("<ablation table>", e))
    }
}

/// Trains the full model and each edge-weight variant on the same stream
/// and writes their final square losses side by side.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<(PathBuf, AblationTable)> {
    if cfg.train.tau.is_none() {
        return Err(Error::config("train.tau", "required for ablations"));
    }
    let stream = cfg.stream()?;
    let variants: Vec<Ablation> = cfg.ablations.clone().unwrap_or_else(|| Ablation::ALL.to_vec());
    let mut runs = vec![("degm".to_string(), cfg.train.clone())];
    runs.extend(variants.iter().map(|a| (a.name().to_string(), a.apply(&cfg.train))));
    let mut columns = Vec::new();
    for (variant, train) in runs {
        let run = run_degm(&stream, &train)?;
        columns.push(AblationColumn {
            variant,
            final_risk: final_risks(&run.log, stream.len()),
            basic_nodes: run.graph.basics.len(),
            specific_nodes: run.graph.specifics.len(),
        });
    }
    let table = AblationTable {
        tasks: stream.names(),
        columns,
    };
    let hash = cfg.hash();
    let dir = cfg.run_dir();
    write_file(&dir.join(CONFIG_FILE), cfg.to_json().as_bytes())?;
    write_file(&dir.join("ablation.csv"), &with_hash(&hash, |w| table.write_csv(w))?)?;
    write_file(&dir.join("ablation.json"), serde_json::to_string_pretty(&table)?.as_bytes())?;
    Ok((dir, table))
}

/// Writes a synthetic task as IDX image and label files and returns their paths
/// (`<prefix>-{train,test}-{images,labels}.idx`).
pub fn gen_synthetic(kind: SyntheticKind, n_train: usize, n_test: usize, dim: usize, seed: u64, prefix: &Path) -> Result<Vec<PathBuf>> {
    let rng = Rng::new(seed);
    let mut paths = Vec::new();
    for (split, n) in [("train", n_train), ("test", n_test)] {
        let ds = synthetic_task(kind, n, dim, &mut rng.derive(split))?;
        let stem = prefix.display();
        let images = PathBuf::from(format!("{stem}-{split}-images.idx"));
        let labels = ds.labels.as_ref().map(|_| PathBuf::from(format!("{stem}-{split}-labels.idx")));
        if let Some(parent) = images.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        save_idx(&ds, &images, labels.as_deref())?;
        paths.push(images);
        paths.extend(labels);
    }
    Ok(paths)
}
