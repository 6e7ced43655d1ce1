//! The expansion graph: basic nodes are complete frozen VAEs, specific nodes
//! own only a new lower encoder and upper decoder and route through the
//! basics' inner sub-modules with edge weights π.
//!
//! For a specific node with weights π over basics `j` and shared noise ε:
//!
//! ```text
//! h  = enc_lower_new(x)
//! z  = Σ_j π_j (μ_j(h) + σ_j(h) ⊙ ε)
//! x̃  = Σ_j π_j dec_lower_j(z)
//! MELBO = log p(x | dec_upper_new(x̃)) − Σ_j π_j KL(N(μ_j, σ_j²) ‖ N(0, I))
//! ```
//!
//! Because one ε is shared, `z ~ N(μ̄, s̄²)` with `μ̄ = Σ π_j μ_j` and
//! `s̄ = Σ π_j σ_j`; that Gaussian is the proposal of the importance-weighted
//! variant. By convexity `Σ π_j KL_j ≥ KL(N(μ̄, s̄²) ‖ N(0, I))`, so MELBO
//! stays below the single-proposal ELBO and hence below `log p(x)`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnkit::dist;
use crate::nnkit::{Activation, AdamState, Binding, DenseLayer, Parameterized, Rng, Tape, Tensor, Var};
use crate::vae::{
    check_kprime, combine_log_weights, draw_noise, log_normal_std_rows, log_std_normal_rows, Likelihood, Posterior,
    VaeComponent,
};

const WEIGHT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct BasicNode {
    pub vae: VaeComponent,
    pub task_id: usize,
    pub task_name: String,
    /// Mean ELBO over the final training epoch of its own task.
    pub reference_elbo: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpecificNode {
    pub enc_lower_new: DenseLayer,
    pub dec_upper_new: DenseLayer,
    /// Edge weights over the basic nodes that existed at creation.
    pub weights: Vec<f64>,
    pub task_id: usize,
    pub task_name: String,
}

impl SpecificNode {
    /// Fresh random new sub-modules sized to match the graph's basics.
    pub fn new(graph: &GraphModel, weights: Vec<f64>, task_id: usize, task_name: &str, rng: &mut Rng) -> Result<Self> {
        let b = graph.basics.first().ok_or_else(|| Error::Structure("a specific node needs a basic node".into()))?;
        let s = b.vae.shape();
        let node = SpecificNode {
            enc_lower_new: DenseLayer::new(s.input_dim, s.hidden_dim, Activation::LeakyRelu, rng),
            dec_upper_new: DenseLayer::new(s.hidden_dim, s.input_dim, b.vae.likelihood.output_activation(), rng),
            weights,
            task_id,
            task_name: task_name.to_string(),
        };
        graph.validate_specific(&node)?;
        Ok(node)
    }

    /// New sub-modules copied from the basic with the largest weight (lowest
    /// index on ties). With one-hot weights the node starts out as that basic.
    pub fn warm_start(graph: &GraphModel, weights: Vec<f64>, task_id: usize, task_name: &str) -> Result<Self> {
        let j = argmax(&weights).ok_or_else(|| Error::Structure("empty edge weights".into()))?;
        let b = graph
            .basics
            .get(j)
            .ok_or_else(|| Error::Structure(format!("edge weight index {j} has no basic node")))?;
        let node = SpecificNode {
            enc_lower_new: b.vae.enc_lower.clone(),
            dec_upper_new: b.vae.dec_upper.clone(),
            weights,
            task_id,
            task_name: task_name.to_string(),
        };
        graph.validate_specific(&node)?;
        Ok(node)
    }
}

impl Parameterized for SpecificNode {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.enc_lower_new.visit("enc_lower_new", f);
        self.dec_upper_new.visit("dec_upper_new", f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.enc_lower_new.visit_mut("enc_lower_new", f);
        self.dec_upper_new.visit_mut("dec_upper_new", f);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "kebab-case")]
pub enum NodeRef {
    Basic(usize),
    Specific(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeScores {
    pub ks: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expansion {
    Basic,
    Specific(Vec<f64>),
}

/// How a specific node's edge weights are derived from knowledge scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgePolicy {
    /// `π_i ∝ w* − ks_i` with `w* = Σ ks`.
    #[default]
    Adaptive,
    /// Equal share for every existing node, flattened onto the basics.
    AllNodes,
    /// Normalised indicator of `ks_i < τ`.
    Thresholded,
    /// `1/K` on every basic.
    Uniform,
    /// One-hot at the smallest score.
    Single,
}

/// The dynamic expansion graph.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GraphModel {
    pub basics: Vec<BasicNode>,
    pub specifics: Vec<SpecificNode>,
    pub tau: f64,
    /// Nodes in creation order; one per task.
    pub nodes: Vec<NodeRef>,
    /// Creation-order index of each basic slot.
    pub gi: Vec<usize>,
}

fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in v.iter().enumerate() {
        if best.is_none_or(|b| x > v[b]) {
            best = Some(i);
        }
    }
    best
}

pub(crate) fn argmin(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in v.iter().enumerate() {
        if best.is_none_or(|b| x < v[b]) {
            best = Some(i);
        }
    }
    best
}

fn check_scores(ks: &[f64]) -> Result<()> {
    if ks.is_empty() {
        return Err(Error::contract("knowledge scores must be nonempty"));
    }
    if let Some(bad) = ks.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::contract(format!("knowledge scores must be finite and >= 0, got {bad}")));
    }
    Ok(())
}

/// `π_i = (w* − ks_i) / ((K − 1) w*)`; `[1]` for one score, uniform when all are zero.
pub fn edge_weights(ks: &[f64]) -> Result<Vec<f64>> {
    check_scores(ks)?;
    let k = ks.len();
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let w: f64 = ks.iter().sum();
    if w == 0.0 {
        return Ok(vec![1.0 / k as f64; k]);
    }
    let denom = (k as f64 - 1.0) * w;
    Ok(ks.iter().map(|s| (w - s) / denom).collect())
}

/// The basic-or-specific decision. A new basic node is built when even the
/// best-matching basic is further than `tau` from the new task.
pub fn expansion_decide(scores: &KnowledgeScores, tau: f64) -> Result<Expansion> {
    check_scores(&scores.ks)?;
    if !(tau > 0.0) {
        return Err(Error::contract(format!("tau must be > 0, got {tau}")));
    }
    let min = scores.ks.iter().copied().fold(f64::INFINITY, f64::min);
    if min > tau {
        Ok(Expansion::Basic)
    } else {
        Ok(Expansion::Specific(edge_weights(&scores.ks)?))
    }
}

pub fn check_simplex(pi: &[f64]) -> Result<()> {
    let sum: f64 = pi.iter().sum();
    if pi.is_empty() || pi.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::Structure(format!("edge weights must lie on the simplex, got {pi:?}")));
    }
    Ok(())
}

/// Basics that carry weight, with the weight.
fn active(weights: &[f64]) -> impl Iterator<Item = (usize, f64)> + '_ {
    weights.iter().copied().enumerate().filter(|(_, w)| *w > 0.0)
}

/// Tape handles of a specific node's latent construction.
pub struct SpecificLatent {
    pub z: Var,
    /// `(basic index, weight, μ_j, clamped log σ_j²)` for every active basic.
    pub heads: Vec<(usize, f64, Var, Var)>,
}

impl GraphModel {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::contract(format!("tau must be > 0, got {tau}")));
        }
        Ok(GraphModel {
            tau,
            ..GraphModel::default()
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn task_ids(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| self.task_id_of(*n)).collect()
    }

    pub fn task_id_of(&self, n: NodeRef) -> usize {
        match n {
            NodeRef::Basic(i) => self.basics[i].task_id,
            NodeRef::Specific(i) => self.specifics[i].task_id,
        }
    }

    pub fn task_name_of(&self, n: NodeRef) -> &str {
        match n {
            NodeRef::Basic(i) => &self.basics[i].task_name,
            NodeRef::Specific(i) => &self.specifics[i].task_name,
        }
    }

    /// The node created for `task_id`.
    pub fn owner(&self, task_id: usize) -> Option<NodeRef> {
        self.nodes.iter().copied().find(|n| self.task_id_of(*n) == task_id)
    }

    pub fn likelihood(&self) -> Option<Likelihood> {
        self.basics.first().map(|b| b.vae.likelihood)
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.basics.first().map(|b| b.vae.input_dim())
    }

    fn check_new_task(&self, task_id: usize) -> Result<()> {
        if self.owner(task_id).is_some() {
            return Err(Error::Structure(format!("task {task_id} already owns a node")));
        }
        Ok(())
    }

    pub fn add_basic_node(&mut self, node: BasicNode) -> Result<usize> {
        self.check_new_task(node.task_id)?;
        if let Some(first) = self.basics.first() {
            if first.vae.shape() != node.vae.shape() || first.vae.likelihood != node.vae.likelihood {
                return Err(Error::Structure("basic nodes must share shape and likelihood".into()));
            }
        }
        self.gi.push(self.nodes.len());
        self.basics.push(node);
        self.nodes.push(NodeRef::Basic(self.basics.len() - 1));
        Ok(self.nodes.len() - 1)
    }

    pub fn add_specific_node(&mut self, node: SpecificNode) -> Result<usize> {
        self.check_new_task(node.task_id)?;
        self.validate_specific(&node)?;
        self.specifics.push(node);
        self.nodes.push(NodeRef::Specific(self.specifics.len() - 1));
        Ok(self.nodes.len() - 1)
    }

    pub fn validate_specific(&self, s: &SpecificNode) -> Result<()> {
        check_simplex(&s.weights)?;
        if s.weights.len() > self.basics.len() {
            return Err(Error::Structure(format!(
                "{} edge weights but only {} basic nodes",
                s.weights.len(),
                self.basics.len()
            )));
        }
        for (j, _) in active(&s.weights) {
            let b = &self.basics[j].vae;
            if b.enc_mu.input_dim() != s.enc_lower_new.output_dim()
                || b.dec_lower.output_dim() != s.dec_upper_new.input_dim()
                || b.input_dim() != s.enc_lower_new.input_dim()
                || b.input_dim() != s.dec_upper_new.output_dim()
            {
                return Err(Error::Structure(format!("specific node does not fit basic node {j}")));
            }
            if b.latent_dim() != self.basics[0].vae.latent_dim() {
                return Err(Error::Structure("basic nodes disagree on latent width".into()));
            }
        }
        Ok(())
    }

    /// Rows of `V` in creation order, padded to the current basic count.
    pub fn v_matrix(&self) -> Vec<(usize, Vec<f64>)> {
        let k = self.basics.len();
        self.nodes
            .iter()
            .map(|n| match *n {
                NodeRef::Basic(i) => (self.basics[i].task_id, vec![0.0; k]),
                NodeRef::Specific(i) => {
                    let s = &self.specifics[i];
                    let mut row = s.weights.clone();
                    row.resize(k, 0.0);
                    (s.task_id, row)
                }
            })
            .collect()
    }

    pub fn write_v_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let k = self.basics.len();
        let mut header = vec!["task_id".to_string()];
        header.extend((1..=k).map(|j| format!("C{j}")));
        out.write_record(&header)?;
        for (task, row) in self.v_matrix() {
            let mut rec = vec![task.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| Error::io("<v matrix>", e))?;
        Ok(())
    }

    pub fn save_v_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_v_csv(f)
    }

    // ---- knowledge similarity and expansion ----

    /// `|reference ELBO − mean ELBO over the probe|` for one basic node.
    pub fn knowledge_similarity(b: &BasicNode, probe: &Tensor, rng: &mut Rng) -> Result<f64> {
        let reference = b
            .reference_elbo
            .ok_or_else(|| Error::contract(format!("basic node of task {} has no reference ELBO", b.task_id)))?;
        if probe.rows() == 0 {
            return Err(Error::contract("probe set is empty"));
        }
        let e = b.vae.elbo(probe, rng)?;
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        Ok((reference - mean).abs())
    }

    /// Scores of every basic node, each under its own evaluation stream.
    pub fn knowledge_scores(&self, probe: &Tensor, eval: &Rng) -> Result<KnowledgeScores> {
        let ks = self
            .basics
            .iter()
            .map(|b| Self::knowledge_similarity(b, probe, &mut eval.derive(&format!("ks/{}", b.task_name))))
            .collect::<Result<Vec<_>>>()?;
        Ok(KnowledgeScores { ks })
    }

    /// Edge weights for a new specific node under `policy`.
    pub fn edge_weights_for(&self, policy: EdgePolicy, scores: &KnowledgeScores) -> Result<Vec<f64>> {
        let ks = &scores.ks;
        check_scores(ks)?;
        let k = ks.len();
        match policy {
            EdgePolicy::Adaptive => edge_weights(ks),
            EdgePolicy::Uniform => Ok(vec![1.0 / k as f64; k]),
            EdgePolicy::Single => {
                let mut pi = vec![0.0; k];
                pi[argmin(ks).expect("nonempty")] = 1.0;
                Ok(pi)
            }
            EdgePolicy::Thresholded => {
                let mask: Vec<f64> = ks.iter().map(|&s| if s < self.tau { 1.0 } else { 0.0 }).collect();
                let n: f64 = mask.iter().sum();
                if n == 0.0 {
                    return self.edge_weights_for(EdgePolicy::Single, scores);
                }
                Ok(mask.iter().map(|m| m / n).collect())
            }
            EdgePolicy::AllNodes => {
                if self.nodes.is_empty() {
                    return Err(Error::Structure("no nodes to share".into()));
                }
                let mut pi = vec![0.0; k];
                for n in &self.nodes {
                    match *n {
                        NodeRef::Basic(j) => pi[j] += 1.0,
                        NodeRef::Specific(i) => {
                            for (j, w) in self.specifics[i].weights.iter().enumerate() {
                                pi[j] += w;
                            }
                        }
                    }
                }
                let total = self.nodes.len() as f64;
                Ok(pi.iter().map(|p| p / total).collect())
            }
        }
    }

    // ---- specific-node forward passes (tape) ----

    /// Latent construction of a specific node. Only `enc_lower_new` is
    /// registered for gradients when `train` is set; basics are constants.
    pub fn specific_encode_on(
        &self,
        tape: &mut Tape,
        s: &SpecificNode,
        x: &Tensor,
        eps: Tensor,
        train: bool,
    ) -> Result<SpecificLatent> {
        let xv = tape.constant(x.clone());
        let binding = if train { Binding::Train("enc_lower_new") } else { Binding::Frozen };
        let h = s.enc_lower_new.forward_on(tape, xv, binding)?;
        let mut heads = Vec::new();
        let mut zs = Vec::new();
        let mut ws = Vec::new();
        for (j, w) in active(&s.weights) {
            let (mu, lv) = self.basics[j].vae.enc_upper_on(tape, h, false)?;
            zs.push(tape.reparameterize(mu, lv, eps.clone())?);
            ws.push(w);
            heads.push((j, w, mu, lv));
        }
        let z = tape.weighted_sum(&zs, &ws)?;
        Ok(SpecificLatent { z, heads })
    }

    /// `dec_upper_new(Σ_j π_j dec_lower_j(z))`.
    pub fn specific_decode_on(&self, tape: &mut Tape, s: &SpecificNode, z: Var, train: bool) -> Result<Var> {
        let mut parts = Vec::new();
        let mut ws = Vec::new();
        for (j, w) in active(&s.weights) {
            parts.push(self.basics[j].vae.dec_lower_on(tape, z, false)?);
            ws.push(w);
        }
        let xt = tape.weighted_sum(&parts, &ws)?;
        let binding = if train { Binding::Train("dec_upper_new") } else { Binding::Frozen };
        s.dec_upper_new.forward_on(tape, xt, binding)
    }

    fn spec_likelihood(&self) -> Result<Likelihood> {
        self.likelihood().ok_or_else(|| Error::Structure("graph has no basic nodes".into()))
    }

    pub fn melbo_on(&self, tape: &mut Tape, s: &SpecificNode, x: &Tensor, eps: Tensor, train: bool) -> Result<Var> {
        let lik = self.spec_likelihood()?;
        let lat = self.specific_encode_on(tape, s, x, eps, train)?;
        let out = self.specific_decode_on(tape, s, lat.z, train)?;
        let ll = lik.log_likelihood_on(tape, x, out)?;
        let mut kls = Vec::new();
        let mut ws = Vec::new();
        for &(_, w, mu, lv) in &lat.heads {
            kls.push(tape.kl_std(mu, lv)?);
            ws.push(w);
        }
        let kl = tape.weighted_sum(&kls, &ws)?;
        tape.sub(ll, kl)
    }

    /// Importance-weighted MELBO with the Gaussian proposal `N(μ̄, s̄²)`; a
    /// single draw takes the [`Self::melbo_on`] path.
    pub fn melbo_iw_on(
        &self,
        tape: &mut Tape,
        s: &SpecificNode,
        x: &Tensor,
        mut eps: Vec<Tensor>,
        train: bool,
    ) -> Result<Var> {
        check_kprime(eps.len())?;
        if eps.len() == 1 {
            return self.melbo_on(tape, s, x, eps.pop().expect("one draw"), train);
        }
        let lik = self.spec_likelihood()?;
        let mut log_w = Vec::with_capacity(eps.len());
        for e in eps {
            let lat = self.specific_encode_on(tape, s, x, e, train)?;
            let out = self.specific_decode_on(tape, s, lat.z, train)?;
            let ll = lik.log_likelihood_on(tape, x, out)?;
            let prior = tape.log_std_normal(lat.z);
            let mut mus = Vec::new();
            let mut sds = Vec::new();
            let mut ws = Vec::new();
            for &(_, w, mu, lv) in &lat.heads {
                mus.push(mu);
                sds.push(tape.exp(lv, 0.5));
                ws.push(w);
            }
            let mbar = tape.weighted_sum(&mus, &ws)?;
            let sbar = tape.weighted_sum(&sds, &ws)?;
            let q = tape.log_normal_std(lat.z, mbar, sbar)?;
            let joint = tape.add(ll, prior)?;
            log_w.push(tape.sub(joint, q)?);
        }
        tape.log_mean_exp(&log_w)
    }

    /// One Adam step on a not-yet-inserted specific node; basics stay frozen.
    pub fn specific_train_step(
        &self,
        s: &mut SpecificNode,
        adam: &mut AdamState,
        x: &Tensor,
        kprime: usize,
        rng: &mut Rng,
    ) -> Result<f64> {
        check_kprime(kprime)?;
        let latent = self.latent_dim()?;
        let eps = draw_noise(x.rows(), latent, kprime, rng);
        let mut tape = Tape::new();
        let obj = self.melbo_iw_on(&mut tape, s, x, eps, true)?;
        let mean = tape.mean(obj);
        let value = tape.value(mean).item();
        let loss = tape.scale(mean, -1.0);
        let grads = tape.backprop(loss)?;
        adam.step(s, &grads)?;
        Ok(value)
    }

    pub fn latent_dim(&self) -> Result<usize> {
        self.basics
            .first()
            .map(|b| b.vae.latent_dim())
            .ok_or_else(|| Error::Structure("graph has no basic nodes".into()))
    }

    // ---- specific-node evaluation (plain) ----

    fn spec_heads(&self, s: &SpecificNode, x: &Tensor) -> Result<Vec<(usize, f64, Posterior)>> {
        let h = s.enc_lower_new.forward(x)?;
        active(&s.weights)
            .map(|(j, w)| {
                let vae = &self.basics[j].vae;
                let mu = vae.enc_mu.forward(&h)?;
                let logvar = vae
                    .enc_logvar
                    .forward(&h)?
                    .map(|v| v.clamp(dist::LOGVAR_MIN, dist::LOGVAR_MAX));
                Ok((j, w, Posterior { mu, logvar }))
            })
            .collect()
    }

    fn spec_latent(heads: &[(usize, f64, Posterior)], eps: &Tensor) -> Result<Tensor> {
        let mut z = Tensor::zeros(eps.shape());
        for (_, w, p) in heads {
            let zj = dist::reparameterize_with(&p.mu, &p.logvar, eps)?;
            for (o, v) in z.data_mut().iter_mut().zip(zj.data()) {
                *o += w * v;
            }
        }
        Ok(z)
    }

    /// Plain `dec_upper_new(Σ π_j dec_lower_j(z))`.
    pub fn specific_decode(&self, s: &SpecificNode, z: &Tensor) -> Result<Tensor> {
        let mut xt: Option<Tensor> = None;
        for (j, w) in active(&s.weights) {
            let mut part = self.basics[j].vae.dec_lower.forward(z)?;
            part.scale_assign(w);
            match &mut xt {
                Some(acc) => acc.add_assign(&part),
                None => xt = Some(part),
            }
        }
        let xt = xt.ok_or_else(|| Error::Structure("specific node has no active edge".into()))?;
        s.dec_upper_new.forward(&xt)
    }

    /// Plain latent construction; returns `z` and each active basic's posterior.
    pub fn specific_encode(&self, s: &SpecificNode, x: &Tensor, eps: &Tensor) -> Result<(Tensor, Vec<Posterior>)> {
        let heads = self.spec_heads(s, x)?;
        let z = Self::spec_latent(&heads, eps)?;
        Ok((z, heads.into_iter().map(|(_, _, p)| p).collect()))
    }

    pub fn melbo_with_noise(&self, s: &SpecificNode, x: &Tensor, eps: &Tensor) -> Result<Vec<f64>> {
        let lik = self.spec_likelihood()?;
        let heads = self.spec_heads(s, x)?;
        let z = Self::spec_latent(&heads, eps)?;
        let mut out = lik.log_likelihood(x, &self.specific_decode(s, &z)?)?;
        for (_, w, p) in &heads {
            let kl = dist::kl_diag_gaussian_to_standard(&p.mu, &p.logvar)?;
            for (o, k) in out.iter_mut().zip(&kl) {
                *o -= w * k;
            }
        }
        Ok(out)
    }

    pub fn melbo_iw_with_noise(&self, s: &SpecificNode, x: &Tensor, eps: &[Tensor]) -> Result<Vec<f64>> {
        check_kprime(eps.len())?;
        if eps.len() == 1 {
            return self.melbo_with_noise(s, x, &eps[0]);
        }
        let lik = self.spec_likelihood()?;
        let heads = self.spec_heads(s, x)?;
        let mut mbar = Tensor::zeros(&[x.rows(), self.latent_dim()?]);
        let mut sbar = mbar.clone();
        for (_, w, p) in &heads {
            for ((m, sd), (mu, lv)) in mbar
                .data_mut()
                .iter_mut()
                .zip(sbar.data_mut().iter_mut())
                .zip(p.mu.data().iter().zip(p.logvar.data()))
            {
                *m += w * mu;
                *sd += w * (0.5 * lv).exp();
            }
        }
        let mut log_w = Vec::with_capacity(eps.len());
        for e in eps {
            let z = Self::spec_latent(&heads, e)?;
            let ll = lik.log_likelihood(x, &self.specific_decode(s, &z)?)?;
            let prior = log_std_normal_rows(&z);
            let q = log_normal_std_rows(&z, &mbar, &sbar);
            log_w.push((0..x.rows()).map(|r| ll[r] + prior[r] - q[r]).collect::<Vec<_>>());
        }
        Ok(combine_log_weights(&log_w))
    }

    // ---- uniform node dispatch ----

    /// ELBO for a basic node, MELBO for a specific node.
    pub fn node_elbo(&self, n: NodeRef, x: &Tensor, rng: &mut Rng) -> Result<Vec<f64>> {
        self.node_bound(n, x, 1, rng)
    }

    /// IWELBO / importance-weighted MELBO with `k` draws.
    pub fn node_bound(&self, n: NodeRef, x: &Tensor, k: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        check_kprime(k)?;
        let eps = draw_noise(x.rows(), self.latent_dim()?, k, rng);
        self.node_bound_with_noise(n, x, &eps)
    }

    /// As [`node_bound`](Self::node_bound) with explicit `[rows, latent]` draws.
    pub fn node_bound_with_noise(&self, n: NodeRef, x: &Tensor, eps: &[Tensor]) -> Result<Vec<f64>> {
        match n {
            NodeRef::Basic(i) => self.basics[i].vae.iwelbo_with_noise(x, eps),
            NodeRef::Specific(i) => self.melbo_iw_with_noise(&self.specifics[i], x, eps),
        }
    }

    /// Deterministic encode-decode through the posterior means.
    pub fn node_reconstruct(&self, n: NodeRef, x: &Tensor) -> Result<Tensor> {
        match n {
            NodeRef::Basic(i) => self.basics[i].vae.reconstruct(x),
            NodeRef::Specific(i) => self.specific_reconstruct(&self.specifics[i], x),
        }
    }

    /// Decodes `Σ π_j μ_j`, the noise-free latent of a specific node.
    pub fn specific_reconstruct(&self, s: &SpecificNode, x: &Tensor) -> Result<Tensor> {
        let heads = self.spec_heads(s, x)?;
        let mut z = Tensor::zeros(&[x.rows(), self.latent_dim()?]);
        for (_, w, p) in &heads {
            for (o, m) in z.data_mut().iter_mut().zip(p.mu.data()) {
                *o += w * m;
            }
        }
        self.specific_decode(s, &z)
    }

    /// MELBO (`k = 1`) or its importance-weighted form for a standalone node.
    pub fn specific_bound(&self, s: &SpecificNode, x: &Tensor, k: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        check_kprime(k)?;
        let eps = draw_noise(x.rows(), self.latent_dim()?, k, rng);
        self.melbo_iw_with_noise(s, x, &eps)
    }

    /// Per-row weighted encoder KL of a node.
    pub fn node_kl(&self, n: NodeRef, x: &Tensor) -> Result<Vec<f64>> {
        match n {
            NodeRef::Basic(i) => self.basics[i].vae.kl(x),
            NodeRef::Specific(i) => {
                let mut out = vec![0.0; x.rows()];
                for (_, w, p) in self.spec_heads(&self.specifics[i], x)? {
                    for (o, k) in out.iter_mut().zip(dist::kl_diag_gaussian_to_standard(&p.mu, &p.logvar)?) {
                        *o += w * k;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Bytes of every node's parameters, in creation order.
    pub fn node_bytes(&self) -> Vec<Vec<u8>> {
        self.nodes
            .iter()
            .map(|n| match *n {
                NodeRef::Basic(i) => self.basics[i].vae.param_bytes(),
                NodeRef::Specific(i) => self.specifics[i].param_bytes(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::VaeShape;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    fn basic(seed: u64, task: usize) -> BasicNode {
        let vae = VaeComponent::new(VaeShape::new(6, 5, 3).unwrap(), Likelihood::Bernoulli, &mut Rng::new(seed)).unwrap();
        BasicNode {
            vae,
            task_id: task,
            task_name: format!("t{task}"),
            reference_elbo: Some(-3.0),
        }
    }

    fn binary(rows: usize, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        Tensor::zeros(&[rows, 6]).map(|_| if rng.bernoulli(0.4) { 1.0 } else { 0.0 })
    }

    #[test]
    fn edge_weight_examples() {
        assert_eq!(edge_weights(&[1.0, 3.0]).unwrap(), vec![0.75, 0.25]);
        assert_eq!(edge_weights(&[2.0; 4]).unwrap(), vec![0.25; 4]);
        assert_eq!(edge_weights(&[7.0]).unwrap(), vec![1.0]);
        assert_eq!(edge_weights(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(edge_weights(&[1.0, -1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn expansion_examples() {
        let s = |v: &[f64]| KnowledgeScores { ks: v.to_vec() };
        assert!(matches!(expansion_decide(&s(&[50.0, 30.0]), 40.0).unwrap(), Expansion::Specific(_)));
        assert_eq!(expansion_decide(&s(&[50.0, 45.0]), 40.0).unwrap(), Expansion::Basic);
        assert!(expansion_decide(&s(&[]), 40.0).is_err());
        assert!(expansion_decide(&s(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn knowledge_similarity_arithmetic() {
        let mut b = basic(0, 1);
        let probe = binary(16, 2);
        let mean = b.vae.elbo(&probe, &mut Rng::new(5)).unwrap().iter().sum::<f64>() / 16.0;
        b.reference_elbo = Some(mean - 40.0);
        let ks = GraphModel::knowledge_similarity(&b, &probe, &mut Rng::new(5)).unwrap();
        assert!((ks - 40.0).abs() < 1e-9);
        b.reference_elbo = None;
        assert!(GraphModel::knowledge_similarity(&b, &probe, &mut Rng::new(5)).is_err());
    }

    fn graph3() -> GraphModel {
        let mut g = GraphModel::new(10.0).unwrap();
        for t in 1..=3 {
            g.add_basic_node(basic(t as u64, t)).unwrap();
        }
        g
    }

    #[test]
    fn v_matrix_bookkeeping() {
        let mut g = graph3();
        let s = SpecificNode::new(&g, vec![0.5, 0.25, 0.25], 4, "t4", &mut Rng::new(1)).unwrap();
        g.add_specific_node(s).unwrap();
        let v = g.v_matrix();
        assert_eq!(v.len(), 4);
        assert!(v.iter().all(|(_, r)| r.len() == 3));
        assert!(v[..3].iter().all(|(_, r)| r.iter().all(|&x| x == 0.0)));
        assert!((v[3].1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(g.gi, vec![0, 1, 2]);
        let mut buf = Vec::new();
        g.write_v_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("task_id,C1,C2,C3\n"));
        assert!(g.add_basic_node(basic(9, 2)).is_err());
    }

    #[test]
    fn ablation_policies_stay_on_the_simplex() {
        let mut g = graph3();
        let s = SpecificNode::new(&g, vec![0.0, 1.0, 0.0], 4, "t4", &mut Rng::new(1)).unwrap();
        g.add_specific_node(s).unwrap();
        let scores = KnowledgeScores { ks: vec![12.0, 3.0, 8.0] };
        for p in [
            EdgePolicy::Adaptive,
            EdgePolicy::AllNodes,
            EdgePolicy::Thresholded,
            EdgePolicy::Uniform,
            EdgePolicy::Single,
        ] {
            check_simplex(&g.edge_weights_for(p, &scores).unwrap()).unwrap();
        }
        assert_eq!(g.edge_weights_for(EdgePolicy::Uniform, &scores).unwrap(), vec![1.0 / 3.0; 3]);
        assert_eq!(g.edge_weights_for(EdgePolicy::Single, &scores).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(g.edge_weights_for(EdgePolicy::Thresholded, &scores).unwrap(), vec![0.0, 0.5, 0.5]);
        assert_eq!(g.edge_weights_for(EdgePolicy::AllNodes, &scores).unwrap(), vec![0.25, 0.5, 0.25]);
        let low = KnowledgeScores { ks: vec![1.0, 2.0, 3.0] };
        assert_eq!(
            g.edge_weights_for(EdgePolicy::Thresholded, &low).unwrap(),
            g.edge_weights_for(EdgePolicy::Uniform, &low).unwrap()
        );
    }

    #[test]
    fn one_hot_specific_is_the_composite_vae() {
        let g = graph3();
        let s = SpecificNode::new(&g, vec![0.0, 1.0, 0.0], 4, "t4", &mut Rng::new(3)).unwrap();
        let b = &g.basics[1].vae;
        let composite = VaeComponent {
            enc_lower: s.enc_lower_new.clone(),
            dec_upper: s.dec_upper_new.clone(),
            ..b.clone()
        };
        let x = binary(5, 7);
        let eps = Rng::new(2).normal_tensor(&[5, 3]);
        let m = g.melbo_with_noise(&s, &x, &eps).unwrap();
        let e = composite.elbo_with_noise(&x, &eps).unwrap();
        for (a, b) in m.iter().zip(&e) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_heads_make_z_independent_of_weights() {
        let mut g = GraphModel::new(1.0).unwrap();
        let b = basic(4, 1);
        g.add_basic_node(b.clone()).unwrap();
        g.add_basic_node(BasicNode { task_id: 2, ..b }).unwrap();
        let x = binary(3, 1);
        let eps = Rng::new(0).normal_tensor(&[3, 3]);
        let mut rng = Rng::new(9);
        let s1 = SpecificNode::new(&g, vec![0.2, 0.8], 3, "t3", &mut rng).unwrap();
        let s2 = SpecificNode {
            weights: vec![0.7, 0.3],
            ..s1.clone()
        };
        let (z1, _) = g.specific_encode(&s1, &x, &eps).unwrap();
        let (z2, _) = g.specific_encode(&s2, &x, &eps).unwrap();
        for (a, b) in z1.data().iter().zip(z2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tape_and_plain_melbo_agree() {
        let g = graph3();
        let s = SpecificNode::new(&g, vec![0.5, 0.3, 0.2], 4, "t4", &mut Rng::new(3)).unwrap();
        let x = binary(4, 3);
        let eps = draw_noise(4, 3, 3, &mut Rng::new(1));
        let plain = g.melbo_iw_with_noise(&s, &x, &eps).unwrap();
        let mut tape = Tape::new();
        let v = g.melbo_iw_on(&mut tape, &s, &x, eps.clone(), false).unwrap();
        for (a, b) in plain.iter().zip(tape.value(v).data()) {
            assert!((a - b).abs() < 1e-10);
        }
        let one = g.melbo_iw_with_noise(&s, &x, &eps[..1]).unwrap();
        assert_eq!(one, g.melbo_with_noise(&s, &x, &eps[0]).unwrap());
    }

    #[test]
    fn training_a_specific_node_leaves_basics_untouched() {
        let g = graph3();
        let before = g.node_bytes();
        let mut s = SpecificNode::warm_start(&g, vec![0.6, 0.4, 0.0], 4, "t4").unwrap();
        let start = s.param_bytes();
        let mut adam = AdamState::new(1e-2);
        let x = binary(8, 4);
        let mut rng = Rng::new(0);
        for _ in 0..100 {
            g.specific_train_step(&mut s, &mut adam, &x, 1, &mut rng).unwrap();
        }
        assert_eq!(g.node_bytes(), before);
        assert_ne!(s.param_bytes(), start);
    }

    #[test]
    fn zero_upper_decoder_gives_half_probabilities() {
        let g = graph3();
        let mut s = SpecificNode::new(&g, vec![1.0, 0.0, 0.0], 4, "t4", &mut Rng::new(3)).unwrap();
        s.dec_upper_new = DenseLayer::zeros(5, 6, Activation::Sigmoid);
        let out = g.specific_decode(&s, &Rng::new(1).normal_tensor(&[4, 3])).unwrap();
        assert!(out.data().iter().all(|&p| p == 0.5));
    }

    proptest! {
        #[test]
        fn adaptive_weights_are_a_simplex(ks in prop::collection::vec(0.0f64..100.0, 1..8)) {
            let pi = edge_weights(&ks).unwrap();
            prop_assert!(check_simplex(&pi).is_ok());
        }

        #[test]
        fn adaptive_weights_are_permutation_equivariant(
            ks in prop::collection::vec(0.0f64..100.0, 2..7),
            seed in 0u64..1000,
        ) {
            let perm = Rng::new(seed).permutation(ks.len());
            let permuted: Vec<f64> = perm.iter().map(|&i| ks[i]).collect();
            let a = edge_weights(&ks).unwrap();
            let b = edge_weights(&permuted).unwrap();
            for (pos, &i) in perm.iter().enumerate() {
                prop_assert!((b[pos] - a[i]).abs() < 1e-12);
            }
            prop_assert_eq!(a.len(), b.len());
        }
    }
}
