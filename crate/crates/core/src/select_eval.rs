//! Label-free component selection and the evaluation metrics.
//!
//! Selection scores every node by its ELBO (basic) or MELBO (specific) under
//! a uniform prior over nodes and picks the argmax. Monte-Carlo noise is
//! keyed by the content of each sample, so every estimate here is
//! deterministic and independent of batch order.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::mean_se;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::GraphModel;
use crate::lifelong::{eval_rng, TaskStream};
use crate::nnkit::{Rng, Tensor};
use crate::vae::GenerativeModel;

/// Monte-Carlo draws behind each selection score.
pub const DEFAULT_K_EVAL: usize = 1;
/// PSNR reported for a perfect reconstruction.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Creation-order position of the chosen node.
    pub chosen: usize,
    pub scores: Vec<f64>,
    pub posterior: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub nll: f64,
    pub sl: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Max-shifted normalised exponentials.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// First index of the maximum.
pub fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn row_key(row: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in row {
        h.update(v.to_le_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

/// `k` tensors of shape `[rows, latent]`; row `r` of each is drawn from a
/// stream keyed by `base` and the bytes of `x.row(r)`.
pub fn row_keyed_noise(x: &Tensor, latent: usize, k: usize, base: &Rng) -> Vec<Tensor> {
    let mut eps: Vec<Tensor> = (0..k).map(|_| Tensor::zeros(&[x.rows(), latent])).collect();
    for r in 0..x.rows() {
        let mut rng = base.derive(&row_key(x.row(r)));
        for e in eps.iter_mut() {
            for v in e.row_mut(r) {
                *v = rng.normal();
            }
        }
    }
    eps
}

/// Selection for every row of `x`.
pub fn select_components(g: &GraphModel, x: &Tensor, k_eval: usize, seed: u64) -> Result<Vec<SelectionResult>> {
    if g.is_empty() {
        return Err(Error::contract("component selection on an empty graph"));
    }
    if k_eval == 0 {
        return Err(Error::contract("k_eval must be at least 1"));
    }
    let eps = row_keyed_noise(x, g.latent_dim()?, k_eval, &Rng::new(seed).derive("select"));
    let mut per_node = Vec::with_capacity(g.len());
    for &n in &g.nodes {
        let mut acc = vec![0.0; x.rows()];
        for e in &eps {
            for (a, v) in acc.iter_mut().zip(g.node_bound_with_noise(n, x, std::slice::from_ref(e))?) {
                *a += v / k_eval as f64;
            }
        }
        per_node.push(acc);
    }
    Ok((0..x.rows())
        .map(|r| {
            let scores: Vec<f64> = per_node.iter().map(|s| s[r]).collect();
            SelectionResult {
                chosen: first_argmax(&scores),
                posterior: softmax(&scores),
                scores,
            }
        })
        .collect())
}

/// Selection for a single sample.
pub fn select_component(g: &GraphModel, x: &[f64], k_eval: usize, seed: u64) -> Result<SelectionResult> {
    let t = Tensor::matrix(1, x.len(), x.to_vec())?;
    Ok(select_components(g, &t, k_eval, seed)?.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NllEstimate {
    pub mean: f64,
    pub se: f64,
    /// Per-row negative bound.
    pub per_row: Vec<f64>,
    /// Creation-order position of the node chosen for each row.
    pub chosen: Vec<usize>,
}

/// Per row: select a node, then take the negative importance-weighted bound
/// under that node with `kprime` draws.
pub fn eval_nll(g: &GraphModel, x: &Tensor, kprime: usize, seed: u64) -> Result<NllEstimate> {
    if kprime == 0 {
        return Err(Error::contract("kprime must be at least 1"));
    }
    if x.rows() == 0 {
        return Err(Error::contract("eval_nll on an empty dataset"));
    }
    let chosen: Vec<usize> = select_components(g, x, DEFAULT_K_EVAL, seed)?.into_iter().map(|s| s.chosen).collect();
    let base = Rng::new(seed).derive("nll");
    let latent = g.latent_dim()?;
    let mut per_row = vec![0.0; x.rows()];
    for (pos, &n) in g.nodes.iter().enumerate() {
        let idx: Vec<usize> = (0..x.rows()).filter(|&r| chosen[r] == pos).collect();
        if idx.is_empty() {
            continue;
        }
        let sub = x.select_rows(&idx);
        let eps = row_keyed_noise(&sub, latent, kprime, &base);
        for (&r, b) in idx.iter().zip(g.node_bound_with_noise(n, &sub, &eps)?) {
            per_row[r] = -b;
        }
    }
    let (mean, se) = mean_se(&per_row);
    Ok(NllEstimate { mean, se, per_row, chosen })
}

fn check_pair(x: &[f64], r: &[f64], op: &'static str) -> Result<()> {
    if x.len() != r.len() {
        return Err(Error::dim(op, x.len().to_string(), r.len().to_string()));
    }
    if x.is_empty() {
        return Err(Error::contract(format!("{op} of empty inputs")));
    }
    Ok(())
}

/// `Σ (x − recon)²` for one sample.
pub fn square_loss(x: &[f64], recon: &[f64]) -> Result<f64> {
    check_pair(x, recon, "square_loss")?;
    Ok(x.iter().zip(recon).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// `10 log10(max² / MSE)`, capped for a near-exact reconstruction.
pub fn psnr(x: &[f64], recon: &[f64], max_val: f64) -> Result<f64> {
    if !(max_val > 0.0) {
        return Err(Error::contract(format!("psnr max_val must be > 0, got {max_val}")));
    }
    let mse = square_loss(x, recon)? / x.len() as f64;
    if mse < 1e-12 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP_DB))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub stride: usize,
    pub k1: f64,
    pub k2: f64,
    pub max_val: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 8,
            stride: 4,
            k1: 0.01,
            k2: 0.03,
            max_val: 1.0,
        }
    }
}

fn ssim_window(a: &[f64], b: &[f64], c1: f64, c2: f64) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cab) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cab += (x - ma) * (y - mb);
    }
    let (va, vb, cab) = (va / n, vb / n, cab / n);
    ((2.0 * ma * mb + c1) * (2.0 * cab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// Mean SSIM over sliding square windows of a `(rows, cols)` image; a single
/// window spanning the input when there is no image shape or it is smaller
/// than one window.
pub fn ssim(x: &[f64], recon: &[f64], image: Option<(usize, usize)>, p: &SsimParams) -> Result<f64> {
    check_pair(x, recon, "ssim")?;
    if !(p.max_val > 0.0) || p.window == 0 || p.stride == 0 {
        return Err(Error::contract("ssim needs max_val > 0 and a positive window and stride"));
    }
    let c1 = (p.k1 * p.max_val).powi(2);
    let c2 = (p.k2 * p.max_val).powi(2);
    let (h, w) = match image {
        Some((h, w)) if h * w == x.len() && h >= p.window && w >= p.window => (h, w),
        _ => return Ok(ssim_window(x, recon, c1, c2)),
    };
    let mut total = 0.0;
    let mut count = 0usize;
    let mut a = Vec::with_capacity(p.window * p.window);
    let mut b = Vec::with_capacity(p.window * p.window);
    for r0 in (0..=h - p.window).step_by(p.stride) {
        for c0 in (0..=w - p.window).step_by(p.stride) {
            a.clear();
            b.clear();
            for r in r0..r0 + p.window {
                a.extend_from_slice(&x[r * w + c0..r * w + c0 + p.window]);
                b.extend_from_slice(&recon[r * w + c0..r * w + c0 + p.window]);
            }
            total += ssim_window(&a, &b, c1, c2);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Row-averaged SL, PSNR and SSIM of reconstructions of a dataset in `[0, 1]`.
pub fn reconstruction_metrics(ds: &Dataset, recon: &Tensor) -> Result<(f64, f64, f64)> {
    if !ds.data.same_shape(recon) {
        return Err(Error::dim(
            "reconstruction_metrics",
            format!("{:?}", ds.data.shape()),
            format!("{:?}", recon.shape()),
        ));
    }
    let p = SsimParams::default();
    let n = ds.len() as f64;
    let (mut sl, mut ps, mut ss) = (0.0, 0.0, 0.0);
    for r in 0..ds.len() {
        let (x, y) = (ds.data.row(r), recon.row(r));
        sl += square_loss(x, y)? / n;
        ps += psnr(x, y, 1.0)? / n;
        ss += ssim(x, y, ds.image, &p)? / n;
    }
    Ok((sl, ps, ss))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub record: MetricsRecord,
    pub nll_se: f64,
    /// Rows routed to each creation-order node; empty for single models.
    pub chosen: BTreeMap<usize, usize>,
    /// Fraction routed to the node that owns this task.
    pub selection_accuracy: Option<f64>,
}

/// Test-set metrics of a graph model on every task of a stream.
pub fn evaluate_graph(g: &GraphModel, stream: &TaskStream, kprime: usize, seed: u64) -> Result<Vec<TaskMetrics>> {
    let mut out = Vec::with_capacity(stream.len());
    for task in &stream.tasks {
        let x = &task.test.data;
        let nll = eval_nll(g, x, kprime, seed)?;
        let mut recon = Tensor::zeros(x.shape());
        let mut chosen = BTreeMap::new();
        for (pos, &n) in g.nodes.iter().enumerate() {
            let idx: Vec<usize> = (0..x.rows()).filter(|&r| nll.chosen[r] == pos).collect();
            if idx.is_empty() {
                continue;
            }
            chosen.insert(pos, idx.len());
            let rec = g.node_reconstruct(n, &x.select_rows(&idx))?;
            for (k, &r) in idx.iter().enumerate() {
                recon.row_mut(r).copy_from_slice(rec.row(k));
            }
        }
        let (sl, psnr, ssim) = reconstruction_metrics(&task.test, &recon)?;
        let owned = g
            .nodes
            .iter()
            .position(|&n| g.task_name_of(n) == task.name)
            .map(|pos| chosen.get(&pos).copied().unwrap_or(0) as f64 / x.rows() as f64);
        out.push(TaskMetrics {
            task: task.name.clone(),
            record: MetricsRecord {
                nll: nll.mean,
                sl,
                psnr,
                ssim,
            },
            nll_se: nll.se,
            chosen,
            selection_accuracy: owned,
        });
    }
    Ok(out)
}

/// Test-set metrics of a single model; NLL from the importance-weighted bound.
pub fn evaluate_model<M: GenerativeModel>(m: &M, stream: &TaskStream, kprime: usize, seed: u64) -> Result<Vec<TaskMetrics>> {
    let mut out = Vec::with_capacity(stream.len());
    for task in &stream.tasks {
        let x = &task.test.data;
        let b = m.iwelbo(x, kprime, &mut eval_rng(seed, &task.name).derive("nll"))?;
        let neg: Vec<f64> = b.iter().map(|v| -v).collect();
        let (nll, nll_se) = mean_se(&neg);
        let (sl, psnr, ssim) = reconstruction_metrics(&task.test, &m.reconstruct(x)?)?;
        out.push(TaskMetrics {
            task: task.name.clone(),
            record: MetricsRecord { nll, sl, psnr, ssim },
            nll_se,
            chosen: BTreeMap::new(),
            selection_accuracy: None,
        });
    }
    Ok(out)
}

pub fn write_metrics_csv(rows: &[TaskMetrics], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["task", "nll", "sl", "psnr", "ssim", "chosen_nodes", "nll_se", "selection_accuracy"])?;
    for r in rows {
        let hist: Vec<String> = r.chosen.iter().map(|(k, v)| format!("{k}:{v}")).collect();
        out.write_record([
            r.task.clone(),
            r.record.nll.to_string(),
            r.record.sl.to_string(),
            r.record.psnr.to_string(),
            r.record.ssim.to_string(),
            hist.join(";"),
            r.nll_se.to_string(),
            r.selection_accuracy.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<metrics table>", e))?;
    Ok(())
}

pub fn save_metrics_csv(rows: &[TaskMetrics], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_metrics_csv(rows, f)
}
