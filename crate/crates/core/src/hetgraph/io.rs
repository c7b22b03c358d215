use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HeteroGraph, Metapath};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTypeSpec {
    pub name: String,
    pub count: usize,
    pub feature_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSet {
    #[serde(rename = "type")]
    pub edge_type: String,
    pub src_type: String,
    pub dst_type: String,
    pub pairs: Vec<[usize; 2]>,
}

/// On-disk JSON document for a [`HeteroGraph`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub node_types: Vec<NodeTypeSpec>,
    pub anchor_type: String,
    #[serde(default)]
    pub features: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(default)]
    pub edges: Vec<EdgeSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
    #[serde(default)]
    pub metapaths: Vec<Metapath>,
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<HeteroGraph> {
    let text = fs::read_to_string(path)?;
    HeteroGraph::from_json(&text)
}

pub fn save_graph(graph: &HeteroGraph, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, graph.to_json()?)?;
    Ok(())
}

impl HeteroGraph {
    pub fn from_json(text: &str) -> Result<Self> {
        HeteroGraph::from_file(serde_json::from_str(text)?)
    }

    /// Canonical serialization: edge pairs sorted, features keyed by type name.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(&self.to_file())?;
        s.push('\n');
        Ok(s)
    }
}
