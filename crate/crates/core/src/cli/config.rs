use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::BoundsConfig;
use crate::data::{build_stream, TaskSpec};
use crate::error::{Error, Result};
use crate::graph::EdgePolicy;
use crate::lifelong::{TaskStream, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Degm,
    Gr,
    GrHier,
    Bounds,
    OrderStudy,
    Ablation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ablation {
    /// Few epochs for specific nodes.
    #[serde(rename = "degm-1")]
    Degm1,
    /// Weights spread over every learned node.
    #[serde(rename = "degm-4")]
    Degm4,
    /// Normalised binary mask `ks < τ`.
    #[serde(rename = "degm-5")]
    Degm5,
    /// Equal weights over basics.
    #[serde(rename = "degm-6")]
    Degm6,
    /// One edge, at the smallest score.
    #[serde(rename = "degm-7")]
    Degm7,
}

/// Specific-node epochs used by [`Ablation::Degm1`] when none are configured.
pub const DEGM1_EPOCHS: usize = 5;

impl Ablation {
    pub const ALL: [Ablation; 5] = [Ablation::Degm1, Ablation::Degm4, Ablation::Degm5, Ablation::Degm6, Ablation::Degm7];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Degm1 => "degm-1",
            Ablation::Degm4 => "degm-4",
            Ablation::Degm5 => "degm-5",
            Ablation::Degm6 => "degm-6",
            Ablation::Degm7 => "degm-7",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| Error::config("ablation", format!("unknown ablation {name:?}")))
    }

    /// The training configuration of this variant.
    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        let mut c = cfg.clone();
        match self {
            Ablation::Degm1 => c.specific_epochs = Some(cfg.specific_epochs.unwrap_or(DEGM1_EPOCHS)),
            Ablation::Degm4 => c.edge_policy = EdgePolicy::AllNodes,
            Ablation::Degm5 => c.edge_policy = EdgePolicy::Thresholded,
            Ablation::Degm6 => c.edge_policy = EdgePolicy::Uniform,
            Ablation::Degm7 => c.edge_policy = EdgePolicy::Single,
        }
        c
    }
}

fn d_out() -> PathBuf {
    PathBuf::from("runs")
}

fn is_default_out(p: &Path) -> bool {
    p == d_out()
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// One experiment: what to run, on which stream, with which settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Variant for `mode = ablation`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<Ablation>,
    /// Variants compared by the `ablate` command; all of them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablations: Option<Vec<Ablation>>,
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub bounds: BoundsConfig,
    /// Task orders for `mode = order-study`; forward and reversed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orders: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub desk_scale: bool,
    /// Root under which `<config-hash>/` run directories are created.
    #[serde(default = "d_out", skip_serializing_if = "is_default_out")]
    pub out: PathBuf,
}

/// Parses and validates; errors name the offending key path.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config {
            path: if path == "." { "<root>".into() } else { path },
            message: e.inner().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { path, message } => Error::Config {
            path: format!("{prefix}.{path}"),
            message,
        },
        other => other,
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| prefixed("train", e))?;
        if self.tasks.is_empty() {
            return Err(Error::config("tasks", "at least one task is required"));
        }
        let mut names: Vec<&str> = self.tasks.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("tasks", "task names must be unique"));
        }
        if self.bounds.samples == 0 {
            return Err(Error::config("bounds.samples", "must be a positive integer"));
        }
        let needs_tau = matches!(self.mode, Mode::Degm | Mode::Ablation | Mode::OrderStudy);
        if needs_tau && self.train.tau.is_none() {
            return Err(Error::config("train.tau", "required for graph-expansion modes"));
        }
        match (self.mode, self.ablation) {
            (Mode::Ablation, None) => return Err(Error::config("ablation", "required when mode is ablation")),
            (m, Some(_)) if m != Mode::Ablation => {
                return Err(Error::config("ablation", "only valid when mode is ablation"));
            }
            _ => {}
        }
        if let Some(v) = &self.ablations {
            if v.is_empty() {
                return Err(Error::config("ablations", "list at least one variant"));
            }
        }
        if let Some(orders) = &self.orders {
            if self.mode != Mode::OrderStudy {
                return Err(Error::config("orders", "only valid when mode is order-study"));
            }
            let mut want: Vec<&str> = self.tasks.iter().map(|t| t.name.as_str()).collect();
            want.sort_unstable();
            for (i, o) in orders.iter().enumerate() {
                let mut got: Vec<&str> = o.iter().map(String::as_str).collect();
                got.sort_unstable();
                if got != want {
                    return Err(Error::config(format!("orders[{i}]"), "must be a permutation of the task names"));
                }
            }
        }
        if self.mode == Mode::OrderStudy && self.tasks.len() < 2 {
            return Err(Error::config("tasks", "an order study needs at least two tasks"));
        }
        Ok(())
    }

    /// Training settings after the ablation, if any.
    pub fn effective_train(&self) -> TrainConfig {
        match self.ablation {
            Some(a) => a.apply(&self.train),
            None => self.train.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialise")
    }

    /// Hex SHA-256 of the canonical (key-sorted, compact) JSON of every field
    /// except the output root.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("configs serialise");
        if let Some(m) = v.as_object_mut() {
            m.remove("out");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(self.hash())
    }

    pub fn stream(&self) -> Result<TaskStream> {
        build_stream(&self.tasks, self.train.seed, self.desk_scale)
    }

    pub fn orders(&self) -> Vec<Vec<String>> {
        self.orders.clone().unwrap_or_else(|| {
            let fwd: Vec<String> = self.tasks.iter().map(|t| t.name.clone()).collect();
            let rev = fwd.iter().rev().cloned().collect();
            vec![fwd, rev]
        })
    }
}
