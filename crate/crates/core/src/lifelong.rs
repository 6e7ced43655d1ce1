//! Task-sequence training: the expansion-graph loop and the single-model
//! generative-replay baselines.
//!
//! Every random stream is derived from the run seed and a task *name*, never
//! a position, so a task's node is trained identically whatever order the
//! stream presents it in. Evaluation draws come from fixed per-task streams,
//! so a frozen node reports bit-identical numbers at every later epoch.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bounds::risk;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{expansion_decide, BasicNode, EdgePolicy, Expansion, GraphModel, NodeRef, SpecificNode};
use crate::nnkit::{AdamState, Rng, Tensor};
use crate::vae::{GenerativeModel, HierShape, HierVae, Likelihood, VaeComponent, VaeShape};

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub name: String,
    pub train: Dataset,
    pub test: Dataset,
}

impl Task {
    pub fn new(name: &str, train: Dataset, test: Dataset) -> Result<Self> {
        if name.is_empty() {
            return Err(Error::config("name", "task names must be nonempty"));
        }
        if train.dim() != test.dim() {
            return Err(Error::dim("task splits", train.dim(), test.dim()));
        }
        Ok(Task {
            name: name.to_string(),
            train,
            test,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.train.dim()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
}

impl TaskStream {
    pub fn new(tasks: Vec<Task>) -> Result<Self> {
        let first = tasks.first().ok_or_else(|| Error::config("stream", "a stream needs at least one task"))?;
        let d = first.input_dim();
        let mut names = BTreeSet::new();
        for (i, t) in tasks.iter().enumerate() {
            if t.input_dim() != d {
                return Err(Error::config(format!("stream[{i}]"), format!("input dim {} differs from {d}", t.input_dim())));
            }
            if !names.insert(t.name.clone()) {
                return Err(Error::config(format!("stream[{i}]"), format!("duplicate task name `{}`", t.name)));
            }
        }
        Ok(TaskStream { tasks })
    }

    pub fn input_dim(&self) -> usize {
        self.tasks[0].input_dim()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.name.clone()).collect()
    }

    /// The same tasks in the order given by `names`, which must be a permutation.
    pub fn reordered(&self, names: &[String]) -> Result<TaskStream> {
        let mut a: Vec<&String> = names.iter().collect();
        let mut b: Vec<String> = self.names();
        a.sort();
        b.sort();
        if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| *x != y) {
            return Err(Error::config("orders", format!("{names:?} is not a permutation of {:?}", self.names())));
        }
        let tasks = names
            .iter()
            .map(|n| self.tasks.iter().find(|t| &t.name == n).cloned().expect("checked permutation"))
            .collect();
        TaskStream::new(tasks)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Objective {
    Elbo,
    Iwelbo { k: usize },
    /// ELBO when `kprime = 1`, otherwise the importance-weighted bound with `kprime` samples.
    #[default]
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierSettings {
    pub latent1: usize,
    pub latent2: usize,
}

impl Default for HierSettings {
    fn default() -> Self {
        HierSettings {
            latent1: 100,
            latent2: 50,
        }
    }
}

fn d_epochs() -> usize {
    500
}
fn d_batch() -> usize {
    64
}
fn d_lr() -> f64 {
    1e-4
}
fn d_probe() -> usize {
    1000
}
fn d_one() -> usize {
    1
}
fn d_hidden() -> usize {
    200
}
fn d_latent() -> usize {
    50
}
fn d_true() -> bool {
    true
}
fn d_likelihood() -> Likelihood {
    Likelihood::Bernoulli
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default)]
    pub objective: Objective,
    /// Importance samples for the `auto` objective.
    #[serde(default = "d_one")]
    pub kprime: usize,
    /// Importance samples for test-time NLL estimates.
    #[serde(default = "d_one")]
    pub eval_kprime: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default = "d_probe")]
    pub probe_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Epoch budget for specific nodes; defaults to `epochs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specific_epochs: Option<usize>,
    #[serde(default = "d_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "d_latent")]
    pub latent_dim: usize,
    #[serde(default = "d_likelihood")]
    pub likelihood: Likelihood,
    #[serde(default)]
    pub edge_policy: EdgePolicy,
    /// Initialise a specific node's new sub-modules from its heaviest basic.
    #[serde(default = "d_true")]
    pub warm_start: bool,
    #[serde(default)]
    pub hier: HierSettings,
    /// Cap on test rows used by the per-epoch metrics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_samples: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch", self.batch),
            ("kprime", self.kprime),
            ("eval_kprime", self.eval_kprime),
            ("probe_size", self.probe_size),
            ("hidden_dim", self.hidden_dim),
            ("latent_dim", self.latent_dim),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be a positive integer"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", format!("must be > 0, got {}", self.lr)));
        }
        if let Some(t) = self.tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config("tau", format!("must be > 0, got {t}")));
            }
        }
        if let Objective::Iwelbo { k: 0 } = self.objective {
            return Err(Error::config("objective.k", "must be a positive integer"));
        }
        if self.specific_epochs == Some(0) {
            return Err(Error::config("specific_epochs", "must be a positive integer"));
        }
        if self.eval_samples == Some(0) {
            return Err(Error::config("eval_samples", "must be a positive integer"));
        }
        self.likelihood.validate().map_err(|e| Error::config("likelihood", e.to_string()))
    }

    pub fn train_kprime(&self) -> usize {
        match self.objective {
            Objective::Elbo => 1,
            Objective::Iwelbo { k } => k,
            Objective::Auto => self.kprime,
        }
    }

    pub fn shape(&self, input_dim: usize) -> Result<VaeShape> {
        VaeShape::new(input_dim, self.hidden_dim, self.latent_dim)
    }
}

/// Generated samples a snapshot contributed to one task's training set,
/// attributed to the earlier tasks they imitate.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    /// Index of the task whose training consumed the buffer.
    pub consumer: usize,
    pub samples: Tensor,
    pub attributed: Vec<usize>,
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    /// 1-based index of the task being trained.
    pub task_index: usize,
    /// 1-based epoch within that task.
    pub epoch: usize,
    /// 1-based index of the evaluated task.
    pub eval_task: usize,
    /// Mean ELBO (MELBO for specific nodes) on the eval task's test set.
    pub objective_value: f64,
    /// Mean per-dimension squared reconstruction error on that test set.
    pub square_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn set_run_id(&mut self, id: &str) {
        for r in &mut self.rows {
            r.run_id = id.to_string();
        }
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        if self.rows.is_empty() {
            out.write_record(["run_id", "task_index", "epoch", "eval_task", "objective_value", "square_loss"])?;
        }
        out.flush().map_err(|e| Error::io("<metrics>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }

    /// Square loss of `eval_task` logged at the last epoch of `task_index`.
    pub fn risk_after(&self, task_index: usize, eval_task: usize) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.task_index == task_index && r.eval_task == eval_task)
            .max_by_key(|r| r.epoch)
            .map(|r| r.square_loss)
    }

    pub fn all_finite(&self) -> bool {
        self.rows.iter().all(|r| r.objective_value.is_finite() && r.square_loss.is_finite())
    }
}

// ---------------------------------------------------------------------------
// Shared helpers

pub fn eval_rng(seed: u64, task_name: &str) -> Rng {
    Rng::new(seed).derive(&format!("eval/{task_name}"))
}

fn eval_rows(test: &Dataset, cfg: &TrainConfig) -> Tensor {
    match cfg.eval_samples {
        Some(n) if n < test.len() => test.data.select_rows(&(0..n).collect::<Vec<_>>()),
        _ => test.data.clone(),
    }
}

fn batches(n: usize, batch: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let perm = rng.permutation(n);
    perm.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

// ---------------------------------------------------------------------------
// DEGM

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRecord {
    pub task_id: usize,
    pub task_name: String,
    /// `None` for the first task.
    pub scores: Option<Vec<f64>>,
    pub basic: bool,
    pub weights: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct DegmRun {
    pub graph: GraphModel,
    pub log: MetricsLog,
    pub expansions: Vec<ExpansionRecord>,
}

/// A node under training, before it joins the graph.
enum Training<'a> {
    Basic(&'a VaeComponent),
    Specific(&'a SpecificNode),
}

fn eval_node(graph: &GraphModel, node: &Training<'_>, x: &Tensor, rng: &mut Rng) -> Result<(f64, f64)> {
    let (obj, recon) = match node {
        Training::Basic(v) => (v.elbo(x, rng)?, v.reconstruct(x)?),
        Training::Specific(s) => (graph.specific_bound(s, x, 1, rng)?, graph.specific_reconstruct(s, x)?),
    };
    Ok((mean(&obj), risk(x, &recon)?))
}

fn eval_graph_node(graph: &GraphModel, n: NodeRef, x: &Tensor, rng: &mut Rng) -> Result<(f64, f64)> {
    let obj = graph.node_elbo(n, x, rng)?;
    let recon = graph.node_reconstruct(n, x)?;
    Ok((mean(&obj), risk(x, &recon)?))
}

/// Logs all seen tasks after one epoch of task `i` (0-based).
fn log_degm_epoch(
    graph: &GraphModel,
    current: &Training<'_>,
    stream: &TaskStream,
    cfg: &TrainConfig,
    i: usize,
    epoch: usize,
    log: &mut MetricsLog,
) -> Result<()> {
    for (j, task) in stream.tasks.iter().enumerate().take(i + 1) {
        let x = eval_rows(&task.test, cfg);
        let mut rng = eval_rng(cfg.seed, &task.name);
        let (obj, sl) = if j == i {
            eval_node(graph, current, &x, &mut rng)?
        } else {
            let owner = graph.owner(j + 1).ok_or_else(|| Error::Structure(format!("task {} has no node", j + 1)))?;
            eval_graph_node(graph, owner, &x, &mut rng)?
        };
        log.rows.push(MetricsRow {
            run_id: "degm".into(),
            task_index: i + 1,
            epoch,
            eval_task: j + 1,
            objective_value: obj,
            square_loss: sl,
        });
    }
    Ok(())
}

pub fn run_degm(stream: &TaskStream, cfg: &TrainConfig) -> Result<DegmRun> {
    cfg.validate()?;
    let tau = cfg.tau.ok_or_else(|| Error::config("train.tau", "the expansion graph needs a threshold tau"))?;
    let root = Rng::new(cfg.seed);
    let shape = cfg.shape(stream.input_dim())?;
    let kprime = cfg.train_kprime();
    let mut graph = GraphModel::new(tau)?;
    let mut log = MetricsLog::default();
    let mut expansions = Vec::new();

    for (i, task) in stream.tasks.iter().enumerate() {
        let task_id = i + 1;
        let node_rng = root.derive(&format!("node/{}", task.name));
        let (decision, scores) = if graph.basics.is_empty() {
            (Expansion::Basic, None)
        } else {
            let n = cfg.probe_size.min(task.train.len());
            let idx = root.derive(&format!("probe/{}", task.name)).sample_without_replacement(task.train.len(), n);
            let probe = task.train.data.select_rows(&idx);
            let scores = graph.knowledge_scores(&probe, &root.derive("ks"))?;
            let d = match expansion_decide(&scores, tau)? {
                Expansion::Basic => Expansion::Basic,
                Expansion::Specific(_) => Expansion::Specific(graph.edge_weights_for(cfg.edge_policy, &scores)?),
            };
            (d, Some(scores.ks))
        };

        let mut batch_rng = node_rng.derive("batches");
        let mut noise_rng = node_rng.derive("noise");
        let mut ref_rng = node_rng.derive("reference");
        match decision {
            Expansion::Basic => {
                let mut vae = VaeComponent::new(shape, cfg.likelihood, &mut node_rng.derive("init"))?;
                let mut adam = AdamState::new(cfg.lr);
                let mut last_epoch = Vec::new();
                for epoch in 1..=cfg.epochs {
                    let final_epoch = epoch == cfg.epochs;
                    for b in batches(task.train.len(), cfg.batch, &mut batch_rng) {
                        let x = task.train.data.select_rows(&b);
                        if final_epoch && kprime > 1 {
                            last_epoch.push(mean(&vae.elbo(&x, &mut ref_rng)?));
                        }
                        let v = vae.train_step(&mut adam, &x, kprime, &mut noise_rng)?;
                        if final_epoch && kprime == 1 {
                            last_epoch.push(v);
                        }
                    }
                    log_degm_epoch(&graph, &Training::Basic(&vae), stream, cfg, i, epoch, &mut log)?;
                }
                expansions.push(ExpansionRecord {
                    task_id,
                    task_name: task.name.clone(),
                    scores,
                    basic: true,
                    weights: None,
                });
                graph.add_basic_node(BasicNode {
                    vae,
                    task_id,
                    task_name: task.name.clone(),
                    reference_elbo: Some(mean(&last_epoch)),
                })?;
            }
            Expansion::Specific(pi) => {
                let mut s = if cfg.warm_start {
                    SpecificNode::warm_start(&graph, pi.clone(), task_id, &task.name)?
                } else {
                    SpecificNode::new(&graph, pi.clone(), task_id, &task.name, &mut node_rng.derive("init"))?
                };
                let mut adam = AdamState::new(cfg.lr);
                for epoch in 1..=cfg.specific_epochs.unwrap_or(cfg.epochs) {
                    for b in batches(task.train.len(), cfg.batch, &mut batch_rng) {
                        let x = task.train.data.select_rows(&b);
                        graph.specific_train_step(&mut s, &mut adam, &x, kprime, &mut noise_rng)?;
                    }
                    log_degm_epoch(&graph, &Training::Specific(&s), stream, cfg, i, epoch, &mut log)?;
                }
                expansions.push(ExpansionRecord {
                    task_id,
                    task_name: task.name.clone(),
                    scores,
                    basic: false,
                    weights: Some(pi),
                });
                graph.add_specific_node(s)?;
            }
        }
    }
    Ok(DegmRun { graph, log, expansions })
}

// ---------------------------------------------------------------------------
// Generative replay

/// State visible to an observer after each epoch of a replay run.
pub struct GrEpoch<'a, M> {
    /// 0-based index of the task being trained.
    pub task: usize,
    /// 1-based epoch within the task.
    pub epoch: usize,
    pub epochs: usize,
    pub model: &'a M,
    pub aux: Option<&'a M>,
    /// The evolved source the model trains on for this task.
    pub source: &'a Tensor,
    /// Task index each source row is attributed to.
    pub source_tasks: &'a [usize],
    /// Model state at the end of every finished task.
    pub snapshots: &'a [M],
    pub stream: &'a TaskStream,
}

#[derive(Clone, Debug)]
pub struct GrRun<M> {
    pub model: M,
    pub aux: Option<M>,
    pub log: MetricsLog,
    /// Model state at the end of each task.
    pub snapshots: Vec<M>,
    pub replay: Vec<ReplayBuffer>,
    /// Per task: the training set actually used and each row's task attribution.
    pub sources: Vec<(Tensor, Vec<usize>)>,
}

/// Rows used as 1-NN references when attributing replay samples.
const ATTRIBUTION_REFS: usize = 2000;

/// Labels each generated sample with the task of its nearest reference row
/// in the generating snapshot's latent-mean space.
fn attribute<M: GenerativeModel>(snapshot: &M, refs: &Tensor, ref_tasks: &[usize], samples: &Tensor) -> Result<Vec<usize>> {
    if samples.rows() == 0 {
        return Ok(Vec::new());
    }
    let rz = snapshot.encode_mean(refs)?;
    let sz = snapshot.encode_mean(samples)?;
    Ok((0..sz.rows())
        .map(|s| {
            let a = sz.row(s);
            let mut best = (f64::INFINITY, 0);
            for r in 0..rz.rows() {
                let d: f64 = a.iter().zip(rz.row(r)).map(|(p, q)| (p - q) * (p - q)).sum();
                if d < best.0 {
                    best = (d, ref_tasks[r]);
                }
            }
            best.1
        })
        .collect())
}

fn log_gr_epoch<M: GenerativeModel>(
    model: &M,
    stream: &TaskStream,
    cfg: &TrainConfig,
    run_id: &str,
    i: usize,
    epoch: usize,
    log: &mut MetricsLog,
) -> Result<()> {
    for (j, task) in stream.tasks.iter().enumerate().take(i + 1) {
        let x = eval_rows(&task.test, cfg);
        let mut rng = eval_rng(cfg.seed, &task.name);
        let obj = mean(&model.elbo(&x, &mut rng)?);
        let sl = risk(&x, &model.reconstruct(&x)?)?;
        log.rows.push(MetricsRow {
            run_id: run_id.to_string(),
            task_index: i + 1,
            epoch,
            eval_task: j + 1,
            objective_value: obj,
            square_loss: sl,
        });
    }
    Ok(())
}

/// Generic replay loop. Task `i` (0-based) trains on its data plus
/// `i · |train_i|` samples from the snapshot taken at the end of task `i − 1`.
/// An optional auxiliary model is trained on exactly the same batches.
pub fn run_gr_with<M: GenerativeModel>(
    stream: &TaskStream,
    cfg: &TrainConfig,
    init: M,
    aux: Option<M>,
    run_id: &str,
    observer: &mut dyn FnMut(&GrEpoch<'_, M>) -> Result<()>,
) -> Result<GrRun<M>> {
    cfg.validate()?;
    if init.input_dim() != stream.input_dim() {
        return Err(Error::dim("replay model input", stream.input_dim(), init.input_dim()));
    }
    let root = Rng::new(cfg.seed).derive(run_id);
    let kprime = cfg.train_kprime();
    let mut model = init;
    let mut aux = aux;
    let mut adam = AdamState::new(cfg.lr);
    let mut aux_adam = AdamState::new(cfg.lr);
    let mut log = MetricsLog::default();
    let mut snapshots: Vec<M> = Vec::new();
    let mut replay = Vec::new();
    let mut sources: Vec<(Tensor, Vec<usize>)> = Vec::new();

    for (i, task) in stream.tasks.iter().enumerate() {
        let (source, source_tasks) = if i == 0 {
            (task.train.data.clone(), vec![0; task.train.len()])
        } else {
            let snap = snapshots.last().expect("a snapshot per finished task");
            let n = task.train.len() * i;
            let samples = snap.generate(n, &mut root.derive(&format!("replay/{}", task.name)))?;
            let (prev, prev_tasks) = &sources[i - 1];
            let keep = prev.rows().min(ATTRIBUTION_REFS);
            let idx = root.derive(&format!("attribution/{}", task.name)).sample_without_replacement(prev.rows(), keep);
            let refs = prev.select_rows(&idx);
            let ref_tasks: Vec<usize> = idx.iter().map(|&k| prev_tasks[k]).collect();
            let attributed = attribute(snap, &refs, &ref_tasks, &samples)?;
            let mut tasks = vec![i; task.train.len()];
            tasks.extend(attributed.iter().copied());
            let all = Tensor::vstack(&[&task.train.data, &samples])?;
            replay.push(ReplayBuffer {
                consumer: i,
                samples,
                attributed,
            });
            (all, tasks)
        };
        sources.push((source, source_tasks));
        let (source, source_tasks) = sources.last().expect("just pushed");

        let mut batch_rng = root.derive(&format!("batches/{}", task.name));
        let mut noise_rng = root.derive(&format!("noise/{}", task.name));
        let mut aux_noise = root.derive(&format!("aux-noise/{}", task.name));
        for epoch in 1..=cfg.epochs {
            for b in batches(source.rows(), cfg.batch, &mut batch_rng) {
                let x = source.select_rows(&b);
                model.train_step(&mut adam, &x, kprime, &mut noise_rng)?;
                if let Some(a) = aux.as_mut() {
                    a.train_step(&mut aux_adam, &x, kprime, &mut aux_noise)?;
                }
            }
            log_gr_epoch(&model, stream, cfg, run_id, i, epoch, &mut log)?;
            observer(&GrEpoch {
                task: i,
                epoch,
                epochs: cfg.epochs,
                model: &model,
                aux: aux.as_ref(),
                source,
                source_tasks,
                snapshots: &snapshots,
                stream,
            })?;
        }
        snapshots.push(model.clone());
    }
    Ok(GrRun {
        model,
        aux,
        log,
        snapshots,
        replay,
        sources,
    })
}

pub fn run_gr_single(stream: &TaskStream, cfg: &TrainConfig) -> Result<GrRun<VaeComponent>> {
    let shape = cfg.shape(stream.input_dim())?;
    let init = VaeComponent::new(shape, cfg.likelihood, &mut Rng::new(cfg.seed).derive("gr/init"))?;
    run_gr_with(stream, cfg, init, None, "gr", &mut |_| Ok(()))
}

pub fn hier_shape(cfg: &TrainConfig, input_dim: usize) -> Result<HierShape> {
    Ok(HierShape {
        base: VaeShape::new(input_dim, cfg.hidden_dim, cfg.hier.latent1)?,
        hidden2: cfg.hidden_dim,
        latent2: cfg.hier.latent2,
    })
}

/// `latent2 = 0` disables the second stochastic layer.
pub fn run_gr_hier(stream: &TaskStream, cfg: &TrainConfig) -> Result<GrRun<HierVae>> {
    let shape = hier_shape(cfg, stream.input_dim())?;
    let init = HierVae::new(shape, cfg.likelihood, &mut Rng::new(cfg.seed).derive("gr/init"))?;
    run_gr_with(stream, cfg, init, None, "gr-hier", &mut |_| Ok(()))
}

// ---------------------------------------------------------------------------
// Task-order study

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderRow {
    pub order: Vec<String>,
    /// Final test risk per task, keyed by the task's position in `order`.
    pub degm_risks: Vec<f64>,
    pub gr_risks: Vec<f64>,
    pub degm_accumulated: f64,
    pub gr_accumulated: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub rows: Vec<OrderRow>,
}

impl OrderReport {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["order", "degm_accumulated_risk", "gr_accumulated_risk"])?;
        for r in &self.rows {
            out.write_record([r.order.join(">"), r.degm_accumulated.to_string(), r.gr_accumulated.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("<order report>", e))?;
        Ok(())
    }
}

/// Final test risk of every task after the whole run, in stream order.
pub fn final_risks(log: &MetricsLog, tasks: usize) -> Vec<f64> {
    (1..=tasks).map(|t| log.risk_after(tasks, t).unwrap_or(f64::NAN)).collect()
}

pub fn order_experiment(stream: &TaskStream, orders: &[Vec<String>], cfg: &TrainConfig) -> Result<OrderReport> {
    let mut rows = Vec::new();
    for order in orders {
        let s = stream.reordered(order)?;
        let degm = run_degm(&s, cfg)?;
        let gr = run_gr_single(&s, cfg)?;
        let dr = final_risks(&degm.log, s.len());
        let gr_r = final_risks(&gr.log, s.len());
        rows.push(OrderRow {
            order: order.clone(),
            degm_accumulated: dr.iter().sum(),
            gr_accumulated: gr_r.iter().sum(),
            degm_risks: dr,
            gr_risks: gr_r,
        });
    }
    Ok(OrderReport { rows })
}
