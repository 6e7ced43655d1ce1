//! Empirical counterparts of the generalisation-bound terms: reconstruction
//! risk, a discrepancy lower bound over a finite hypothesis family, the
//! encoder-KL gap, and the per-epoch check of the source/target inequality
//! for a replay-trained model.
//!
//! A hypothesis is the deterministic encode-decode map `x ↦ dec(μ(x))` and
//! the loss is the squared error divided by the input dimension.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphModel, NodeRef};
use crate::lifelong::{eval_rng, run_gr_with, GrEpoch, GrRun, MetricsLog, TaskStream, TrainConfig};
use crate::nnkit::{Rng, Tensor};
use crate::vae::{GenerativeModel, VaeComponent};

/// `mean_rows ‖x − r‖² / d`.
pub fn risk(x: &Tensor, recon: &Tensor) -> Result<f64> {
    Ok(mean(&row_losses(x, recon)?))
}

fn row_losses(x: &Tensor, recon: &Tensor) -> Result<Vec<f64>> {
    if x.rows() == 0 {
        return Err(Error::contract("risk of an empty dataset"));
    }
    if !x.same_shape(recon) {
        return Err(Error::dim("risk", format!("{:?}", x.shape()), format!("{:?}", recon.shape())));
    }
    let d = x.cols() as f64;
    Ok((0..x.rows())
        .map(|r| x.row(r).iter().zip(recon.row(r)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / d)
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Mean and standard error of the mean.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    let m = mean(v);
    if n < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

/// An encode-decode map.
pub trait Hypothesis {
    fn apply(&self, x: &Tensor) -> Result<Tensor>;
}

impl<M: GenerativeModel> Hypothesis for M {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.reconstruct(x)
    }
}

/// One node of an expansion graph viewed as a hypothesis.
pub struct NodeHypothesis<'a> {
    pub graph: &'a GraphModel,
    pub node: NodeRef,
}

impl Hypothesis for NodeHypothesis<'_> {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.graph.node_reconstruct(self.node, x)
    }
}

pub fn hypothesis_risk(h: &dyn Hypothesis, x: &Tensor) -> Result<f64> {
    risk(x, &h.apply(x)?)
}

/// Named, immutable hypotheses sharing one input width.
#[derive(Default)]
pub struct HypothesisSet<'a> {
    entries: Vec<(String, &'a dyn Hypothesis)>,
}

impl<'a> HypothesisSet<'a> {
    pub fn new() -> Self {
        HypothesisSet { entries: Vec::new() }
    }

    pub fn register(&mut self, name: &str, h: &'a dyn Hypothesis) {
        self.entries.push((name.to_string(), h));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    /// `max_{h, h'} |E_P L(h, h') − E_Q L(h, h')|` over the family; a lower
    /// bound on the supremum over all hypotheses.
    pub lower_bound: f64,
    /// Names of the maximising pair, if any pair differs.
    pub pair: Option<(String, String)>,
}

pub fn estimate_discrepancy(p: &Tensor, q: &Tensor, h: &HypothesisSet<'_>) -> Result<Discrepancy> {
    if h.len() < 2 {
        return Err(Error::contract("the discrepancy needs at least two hypotheses"));
    }
    if p.rows() == 0 || q.rows() == 0 {
        return Err(Error::contract("the discrepancy needs nonempty sample sets"));
    }
    let on_p: Vec<Tensor> = h.entries.iter().map(|(_, f)| f.apply(p)).collect::<Result<_>>()?;
    let on_q: Vec<Tensor> = h.entries.iter().map(|(_, f)| f.apply(q)).collect::<Result<_>>()?;
    let mut best = Discrepancy {
        lower_bound: 0.0,
        pair: None,
    };
    for a in 0..h.len() {
        for b in (a + 1)..h.len() {
            let gap = (risk(&on_p[a], &on_p[b])? - risk(&on_q[a], &on_q[b])?).abs();
            if gap > best.lower_bound {
                best = Discrepancy {
                    lower_bound: gap,
                    pair: Some((h.entries[a].0.clone(), h.entries[b].0.clone())),
                };
            }
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlGap {
    pub gap: f64,
    /// Standard error of the signed difference.
    pub se: f64,
}

/// `|E_source KL − (1/t) Σ_i E_{target_i} KL|` for the model's first-layer encoder.
pub fn estimate_kl_gap<M: GenerativeModel>(model: &M, targets: &[&Tensor], source: &Tensor) -> Result<KlGap> {
    if targets.is_empty() || source.rows() == 0 || targets.iter().any(|t| t.rows() == 0) {
        return Err(Error::contract("the KL gap needs nonempty source and target sets"));
    }
    let (ms, ses) = mean_se(&model.encoder_kl(source)?);
    let t = targets.len() as f64;
    let mut mt = 0.0;
    let mut var_t = 0.0;
    for x in targets {
        let (m, se) = mean_se(&model.encoder_kl(x)?);
        mt += m / t;
        var_t += se * se / (t * t);
    }
    Ok(KlGap {
        gap: (ms - mt).abs(),
        se: (ses * ses + var_t).sqrt(),
    })
}

// ---------------------------------------------------------------------------
// Per-epoch report for a replay run

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    /// Rows per side used by the KL-gap and discrepancy estimates.
    #[serde(default = "d_samples")]
    pub samples: usize,
}

fn d_samples() -> usize {
    10_000
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig { samples: d_samples() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    /// Epoch counted across the whole run, from 1.
    pub epoch: usize,
    /// 1-based task being trained.
    pub task_t: usize,
    pub source_risk: f64,
    pub target_risk_avg: f64,
    /// One entry per task in the stream; `None` for tasks not yet seen.
    pub target_risk: Vec<Option<f64>>,
    pub kl_gap: f64,
    pub disc_lower_bound: f64,
    /// `disc + ε` with `ε` the auxiliary model's risk on both sides.
    pub err_a_proxy: f64,
    /// `|target_risk_avg − source_risk|`.
    pub err_d_proxy: f64,
    /// Average target negative ELBO.
    pub lhs: f64,
    /// Source negative ELBO + KL gap + `d · (disc + ε)`.
    pub rhs: f64,
    pub slack: f64,
    pub slack_se: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub tasks: usize,
    pub rows: Vec<BoundsRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl BoundsReport {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["epoch", "task_t", "source_risk", "target_risk_avg"].map(String::from).to_vec();
        header.extend((1..=self.tasks).map(|i| format!("target_risk_task_{i}")));
        header.extend(
            ["kl_gap", "disc_lower_bound", "slack", "err_a_proxy", "err_d_proxy", "lhs", "rhs", "slack_se"].map(String::from),
        );
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.epoch.to_string(),
                r.task_t.to_string(),
                r.source_risk.to_string(),
                r.target_risk_avg.to_string(),
            ];
            rec.extend(r.target_risk.iter().map(|v| fmt_opt(*v)));
            rec.extend(
                [r.kl_gap, r.disc_lower_bound, r.slack, r.err_a_proxy, r.err_d_proxy, r.lhs, r.rhs, r.slack_se]
                    .map(|v| v.to_string()),
            );
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| Error::io("<bounds report>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }

    /// Rows logged at the last epoch of each task.
    pub fn task_end_rows(&self) -> Vec<&BoundsRow> {
        let mut out: Vec<&BoundsRow> = Vec::new();
        for r in &self.rows {
            match out.last_mut() {
                Some(last) if last.task_t == r.task_t => *last = r,
                _ => out.push(r),
            }
        }
        out
    }
}

fn cap_rows(x: &Tensor, n: usize, rng: &mut Rng) -> Tensor {
    if x.rows() <= n {
        return x.clone();
    }
    let mut idx = rng.sample_without_replacement(x.rows(), n);
    idx.sort_unstable();
    x.select_rows(&idx)
}

/// The bound terms after one epoch of task `t`.
pub fn bound_row<M: GenerativeModel>(ep: &GrEpoch<'_, M>, seed: u64, bcfg: &BoundsConfig) -> Result<BoundsRow> {
    let t = ep.task + 1;
    let h = ep.model;
    // At the first task the evolved source is the task itself and h* = h.
    let h_star = if ep.task == 0 { h } else { ep.aux.unwrap_or(h) };
    let d = ep.stream.input_dim() as f64;
    let seen = &ep.stream.tasks[..t];
    let mut sample_rng = Rng::new(seed).derive(&format!("bounds/sample/{}/{}", t, ep.epoch));

    let source = cap_rows(ep.source, bcfg.samples, &mut sample_rng);
    let per_task = (bcfg.samples / t).max(1);
    let targets: Vec<Tensor> = seen.iter().map(|task| cap_rows(&task.test.data, per_task, &mut sample_rng)).collect();
    let target_refs: Vec<&Tensor> = targets.iter().collect();
    let target_union = Tensor::vstack(&target_refs)?;

    let mut target_risk = vec![None; ep.stream.len()];
    let mut risks = Vec::with_capacity(t);
    for (i, x) in targets.iter().enumerate() {
        let r = hypothesis_risk(h, x)?;
        target_risk[i] = Some(r);
        risks.push(r);
    }
    let target_risk_avg = mean(&risks);
    let source_risk = hypothesis_risk(h, &source)?;

    let kl = estimate_kl_gap(h, &target_refs, &source)?;

    let mut set = HypothesisSet::new();
    set.register("h", h);
    set.register("h_star", h_star);
    for (i, s) in ep.snapshots.iter().enumerate() {
        set.register(&format!("snapshot_{}", i + 1), s);
    }
    let disc = estimate_discrepancy(&target_union, &source, &set)?.lower_bound;
    let eps = hypothesis_risk(h_star, &target_union)? + hypothesis_risk(h_star, &source)?;

    // Negative ELBOs: per-task target averages and the source.
    let mut lhs = 0.0;
    let mut lhs_var = 0.0;
    for (task, x) in seen.iter().zip(&targets) {
        let e = h.elbo(x, &mut eval_rng(seed, &task.name))?;
        let (m, se) = mean_se(&e);
        lhs -= m / t as f64;
        lhs_var += se * se / (t * t) as f64;
    }
    let (src_elbo, src_se) = mean_se(&h.elbo(&source, &mut Rng::new(seed).derive("bounds/source-elbo"))?);
    let rhs = -src_elbo + kl.gap + d * (disc + eps);
    Ok(BoundsRow {
        epoch: ep.task * ep.epochs + ep.epoch,
        task_t: t,
        source_risk,
        target_risk_avg,
        target_risk,
        kl_gap: kl.gap,
        disc_lower_bound: disc,
        err_a_proxy: disc + eps,
        err_d_proxy: (target_risk_avg - source_risk).abs(),
        lhs,
        rhs,
        slack: rhs - lhs,
        slack_se: (lhs_var + src_se * src_se + kl.se * kl.se).sqrt(),
    })
}

#[derive(Clone, Debug)]
pub struct BoundsRun {
    pub gr: GrRun<VaeComponent>,
    pub report: BoundsReport,
}

/// A replay run with an auxiliary model trained in lockstep on the same
/// evolved source, reporting the bound terms after every epoch.
pub fn run_bounds(stream: &TaskStream, cfg: &TrainConfig, bcfg: &BoundsConfig) -> Result<BoundsRun> {
    if bcfg.samples == 0 {
        return Err(Error::config("bounds.samples", "must be a positive integer"));
    }
    let shape = cfg.shape(stream.input_dim())?;
    let root = Rng::new(cfg.seed);
    let init = VaeComponent::new(shape, cfg.likelihood, &mut root.derive("gr/init"))?;
    let aux = VaeComponent::new(shape, cfg.likelihood, &mut root.derive("bounds/aux-init"))?;
    let mut rows = Vec::new();
    let gr = run_gr_with(stream, cfg, init, Some(aux), "gr", &mut |ep| {
        rows.push(bound_row(ep, cfg.seed, bcfg)?);
        Ok(())
    })?;
    Ok(BoundsRun {
        gr,
        report: BoundsReport {
            tasks: stream.len(),
            rows,
        },
    })
}

// ---------------------------------------------------------------------------
// Forgetting curves and replay chains

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub model: String,
    pub task_index: usize,
    pub epoch: usize,
    pub eval_task: usize,
    pub risk: f64,
}

/// Tidy per-task risk curves for each labelled metrics log.
pub fn forgetting_curves(logs: &[(&str, &MetricsLog)]) -> Vec<CurveRow> {
    logs.iter()
        .flat_map(|(label, log)| {
            log.rows.iter().map(move |r| CurveRow {
                model: label.to_string(),
                task_index: r.task_index,
                epoch: r.epoch,
                eval_task: r.eval_task,
                risk: r.square_loss,
            })
        })
        .collect()
}

pub fn write_curves_csv(rows: &[CurveRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<curves>", e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainTerm {
    /// 1-based task the samples imitate.
    pub task: usize,
    /// 0 is the real training set; `j ≥ 1` is the replay produced for task `task + j`.
    pub generation: usize,
    /// Replay generations task `task` goes through in the whole run.
    pub chain_length: usize,
    pub samples: usize,
    /// Risk of the final model on that generation's samples.
    pub risk: Option<f64>,
    /// Difference to the previous generation's risk.
    pub step: Option<f64>,
}

/// Per-task, per-generation risk of the final model on the replay chain.
pub fn accumulated_error_proxy<M: GenerativeModel>(run: &GrRun<M>, stream: &TaskStream) -> Result<Vec<ChainTerm>> {
    let t = stream.len();
    if run.snapshots.len() != t {
        return Err(Error::contract(format!("expected {t} snapshots, found {}", run.snapshots.len())));
    }
    let mut out = Vec::new();
    for i in 0..t {
        let mut prev: Option<f64> = None;
        for j in 0..(t - i) {
            let samples = if j == 0 {
                stream.tasks[i].train.data.clone()
            } else {
                let buf = run
                    .replay
                    .iter()
                    .find(|b| b.consumer == i + j)
                    .ok_or_else(|| Error::contract(format!("missing replay generation for task {}", i + j + 1)))?;
                let idx: Vec<usize> = (0..buf.samples.rows()).filter(|&k| buf.attributed[k] == i).collect();
                buf.samples.select_rows(&idx)
            };
            let r = if samples.rows() > 0 {
                Some(hypothesis_risk(&run.model, &samples)?)
            } else {
                None
            };
            out.push(ChainTerm {
                task: i + 1,
                generation: j,
                chain_length: t - 1 - i,
                samples: samples.rows(),
                risk: r,
                step: match (prev, r) {
                    (Some(a), Some(b)) => Some(b - a),
                    _ => None,
                },
            });
            if r.is_some() {
                prev = r;
            }
        }
    }
    Ok(out)
}
