//! On-disk models: `manifest.json` describing the topology and every named
//! parameter array, plus one little-endian `f64` file per array.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BasicNode, GraphModel, NodeRef, SpecificNode};
use crate::nnkit::{Parameterized, Tensor};
use crate::vae::{HierShape, HierVae, Likelihood, VaeComponent, VaeShape};

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug)]
pub enum Model {
    Graph(GraphModel),
    Single(VaeComponent),
    Hier(HierVae),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Graph(_) => "graph",
            Model::Single(_) => "single",
            Model::Hier(_) => "hier",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BasicMeta {
    task_id: usize,
    task_name: String,
    reference_elbo: Option<f64>,
    shape: VaeShape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SpecificMeta {
    task_id: usize,
    task_name: String,
    weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum Topology {
    Graph {
        tau: f64,
        nodes: Vec<NodeRef>,
        basics: Vec<BasicMeta>,
        specifics: Vec<SpecificMeta>,
    },
    Single {
        shape: VaeShape,
    },
    Hier {
        shape: HierShape,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    config_hash: String,
    likelihood: Likelihood,
    topology: Topology,
    arrays: Vec<ArrayEntry>,
}

/// Every parameter of the model under a globally unique name.
fn visit_all(m: &Model, f: &mut dyn FnMut(&str, &Tensor)) {
    match m {
        Model::Graph(g) => {
            for (i, b) in g.basics.iter().enumerate() {
                b.vae.visit_params(&mut |n, t| f(&format!("basic{i}.{n}"), t));
            }
            for (i, s) in g.specifics.iter().enumerate() {
                s.visit_params(&mut |n, t| f(&format!("specific{i}.{n}"), t));
            }
        }
        Model::Single(v) => v.visit_params(f),
        Model::Hier(h) => h.visit_params(f),
    }
}

fn visit_all_mut(m: &mut Model, f: &mut dyn FnMut(&str, &mut Tensor)) {
    match m {
        Model::Graph(g) => {
            for (i, b) in g.basics.iter_mut().enumerate() {
                b.vae.visit_params_mut(&mut |n, t| f(&format!("basic{i}.{n}"), t));
            }
            for (i, s) in g.specifics.iter_mut().enumerate() {
                s.visit_params_mut(&mut |n, t| f(&format!("specific{i}.{n}"), t));
            }
        }
        Model::Single(v) => v.visit_params_mut(f),
        Model::Hier(h) => h.visit_params_mut(f),
    }
}

fn likelihood_of(m: &Model) -> Result<Likelihood> {
    match m {
        Model::Graph(g) => g.likelihood().ok_or_else(|| Error::contract("cannot save an empty graph")),
        Model::Single(v) => Ok(v.likelihood),
        Model::Hier(h) => Ok(h.base.likelihood),
    }
}

fn topology_of(m: &Model) -> Topology {
    match m {
        Model::Graph(g) => Topology::Graph {
            tau: g.tau,
            nodes: g.nodes.clone(),
            basics: g
                .basics
                .iter()
                .map(|b| BasicMeta {
                    task_id: b.task_id,
                    task_name: b.task_name.clone(),
                    reference_elbo: b.reference_elbo,
                    shape: b.vae.shape(),
                })
                .collect(),
            specifics: g
                .specifics
                .iter()
                .map(|s| SpecificMeta {
                    task_id: s.task_id,
                    task_name: s.task_name.clone(),
                    weights: s.weights.clone(),
                })
                .collect(),
        },
        Model::Single(v) => Topology::Single { shape: v.shape() },
        Model::Hier(h) => Topology::Hier { shape: h.shape() },
    }
}

pub fn save_checkpoint(m: &Model, dir: &Path, config_hash: &str) -> Result<()> {
    let arrays_dir = dir.join("arrays");
    std::fs::create_dir_all(&arrays_dir).map_err(|e| Error::io(&arrays_dir, e))?;
    let mut arrays = Vec::new();
    let mut failure = None;
    visit_all(m, &mut |name, t| {
        if failure.is_some() {
            return;
        }
        let file = format!("arrays/{name}.bin");
        let path = dir.join(&file);
        if let Err(e) = std::fs::write(&path, t.to_le_bytes()) {
            failure = Some(Error::io(path, e));
        }
        arrays.push(ArrayEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            file,
        });
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config_hash: config_hash.to_string(),
        likelihood: likelihood_of(m)?,
        topology: topology_of(m),
        arrays,
    };
    let path = dir.join(MANIFEST);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(path, e))
}

/// A model with the recorded topology and zero parameters.
fn skeleton(topology: &Topology, lik: Likelihood) -> Result<Model> {
    Ok(match topology {
        Topology::Single { shape } => Model::Single(VaeComponent::zeroed(*shape, lik)?),
        Topology::Hier { shape } => Model::Hier(HierVae::zeroed(*shape, lik)?),
        Topology::Graph {
            tau,
            nodes,
            basics,
            specifics,
        } => {
            let mut g = GraphModel::new(*tau)?;
            for n in nodes {
                match *n {
                    NodeRef::Basic(i) => {
                        let b = basics.get(i).ok_or_else(|| Error::Structure(format!("missing basic {i}")))?;
                        g.add_basic_node(BasicNode {
                            vae: VaeComponent::zeroed(b.shape, lik)?,
                            task_id: b.task_id,
                            task_name: b.task_name.clone(),
                            reference_elbo: b.reference_elbo,
                        })?;
                    }
                    NodeRef::Specific(i) => {
                        let s = specifics.get(i).ok_or_else(|| Error::Structure(format!("missing specific {i}")))?;
                        let node = SpecificNode::warm_start(&g, s.weights.clone(), s.task_id, &s.task_name)?;
                        g.add_specific_node(node)?;
                    }
                }
                if g.nodes.last() != Some(n) {
                    return Err(Error::Structure(format!("node {n:?} recorded out of creation order")));
                }
            }
            if g.basics.len() != basics.len() || g.specifics.len() != specifics.len() {
                return Err(Error::Structure("node list does not cover every recorded node".into()));
            }
            Model::Graph(g)
        }
    })
}

/// Loads a checkpoint and the config hash it was written under.
pub fn load_checkpoint(dir: &Path) -> Result<(Model, String)> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format {
            file: path.display().to_string(),
            offset: 0,
            message: format!("unsupported checkpoint version {}", manifest.format_version),
        });
    }
    let mut model = skeleton(&manifest.topology, manifest.likelihood)?;
    let mut entries: BTreeMap<&str, &ArrayEntry> = manifest.arrays.iter().map(|a| (a.name.as_str(), a)).collect();
    let mut failure = None;
    visit_all_mut(&mut model, &mut |name, t| {
        if failure.is_some() {
            return;
        }
        let Some(entry) = entries.remove(name) else {
            failure = Some(Error::Structure(format!("checkpoint lacks array `{name}`")));
            return;
        };
        let file = dir.join(&entry.file);
        let loaded = std::fs::read(&file)
            .map_err(|e| Error::io(&file, e))
            .and_then(|bytes| Tensor::from_le_bytes(entry.shape.clone(), &bytes));
        match loaded {
            Ok(v) if v.shape() == t.shape() => *t = v,
            Ok(v) => failure = Some(Error::dim("load_checkpoint", format!("{:?}", t.shape()), format!("{:?}", v.shape()))),
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(name) = entries.keys().next() {
        return Err(Error::Structure(format!("checkpoint array `{name}` matches no parameter")));
    }
    Ok((model, manifest.config_hash))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::Rng;

    fn graph() -> GraphModel {
        let shape = VaeShape::new(5, 4, 2).unwrap();
        let mut g = GraphModel::new(2.0).unwrap();
        for i in 0..2 {
            g.add_basic_node(BasicNode {
                vae: VaeComponent::new(shape, Likelihood::Bernoulli, &mut Rng::new(i)).unwrap(),
                task_id: i as usize + 1,
                task_name: format!("t{i}"),
                reference_elbo: Some(-3.5 - i as f64),
            })
            .unwrap();
        }
        let s = SpecificNode::new(&g, vec![0.25, 0.75], 3, "t2", &mut Rng::new(9)).unwrap();
        g.add_specific_node(s).unwrap();
        g
    }

    #[test]
    fn graph_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = graph();
        save_checkpoint(&Model::Graph(g.clone()), dir.path(), "abc").unwrap();
        let (m, hash) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(hash, "abc");
        let Model::Graph(h) = m else { panic!("wrong kind") };
        assert_eq!(h.node_bytes(), g.node_bytes());
        assert_eq!(h.v_matrix(), g.v_matrix());
        assert_eq!(h.basics[1].reference_elbo, Some(-4.5));
    }

    #[test]
    fn hier_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let shape = HierShape {
            base: VaeShape::new(5, 4, 3).unwrap(),
            hidden2: 3,
            latent2: 2,
        };
        let h = HierVae::new(shape, Likelihood::Bernoulli, &mut Rng::new(4)).unwrap();
        save_checkpoint(&Model::Hier(h.clone()), dir.path(), "x").unwrap();
        let Model::Hier(back) = load_checkpoint(dir.path()).unwrap().0 else { panic!("wrong kind") };
        assert_eq!(back.param_bytes(), h.param_bytes());
    }

    #[test]
    fn missing_or_corrupt_files_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Io { .. })));
        let v = VaeComponent::new(VaeShape::new(3, 2, 1).unwrap(), Likelihood::Bernoulli, &mut Rng::new(0)).unwrap();
        save_checkpoint(&Model::Single(v), dir.path(), "x").unwrap();
        std::fs::write(dir.path().join("arrays/enc_mu.bias.bin"), [0u8; 3]).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
