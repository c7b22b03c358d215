//! Heterogeneous graphs, metapaths and the semantic views they induce.

mod io;
mod synthetic;
mod view;

pub use io::{load_graph, save_graph, EdgeSet, GraphFile, NodeTypeSpec};
pub use synthetic::{synthetic_hg, SyntheticConfig};
pub use view::{metapath_adjacency, SemanticView};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A type-level path on the network schema, e.g. author-paper-author.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metapath {
    pub name: String,
    pub node_types: Vec<String>,
    pub edge_types: Vec<String>,
}

/// Typed nodes and edges with per-type features.
///
/// Node ids are 0-based within their type. The global id of a node is its
/// local id offset by the counts of all preceding types.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    node_types: Vec<NodeTypeSpec>,
    anchor_type: String,
    features: BTreeMap<String, Tensor>,
    edges: Vec<EdgeSet>,
    labels: Option<Vec<usize>>,
    metapaths: Vec<Metapath>,
}

impl HeteroGraph {
    /// Validates a parsed graph document and canonicalizes edge lists
    /// (pairs sorted, duplicates dropped).
    pub fn from_file(file: GraphFile) -> Result<Self> {
        let GraphFile {
            node_types,
            anchor_type,
            features,
            mut edges,
            labels,
            metapaths,
        } = file;

        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in &node_types {
            if counts.insert(t.name.as_str(), t.count).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate node type `{}`", t.name)));
            }
        }
        let anchor = node_types
            .iter()
            .find(|t| t.name == anchor_type)
            .ok_or_else(|| Error::InvalidGraph(format!("unknown anchor type `{anchor_type}`")))?;
        if anchor.feature_dim == 0 {
            return Err(Error::InvalidGraph("anchor type must carry features".into()));
        }

        let mut feature_tensors = BTreeMap::new();
        for name in features.keys() {
            if !counts.contains_key(name.as_str()) {
                return Err(Error::InvalidGraph(format!("features for unknown type `{name}`")));
            }
        }
        for t in &node_types {
            match features.get(&t.name) {
                Some(rows) => {
                    if rows.len() != t.count {
                        return Err(Error::InvalidGraph(format!(
                            "feature-dimension mismatch: type `{}` has {} rows for {} nodes",
                            t.name,
                            rows.len(),
                            t.count
                        )));
                    }
                    if let Some(bad) = rows.iter().position(|r| r.len() != t.feature_dim) {
                        return Err(Error::InvalidGraph(format!(
                            "feature-dimension mismatch: type `{}` row {bad} has {} values, expected {}",
                            t.name,
                            rows[bad].len(),
                            t.feature_dim
                        )));
                    }
                    if rows.iter().flatten().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidGraph(format!("non-finite feature in `{}`", t.name)));
                    }
                    let data = rows.iter().flatten().copied().collect();
                    feature_tensors.insert(t.name.clone(), Tensor::new(vec![t.count, t.feature_dim], data)?);
                }
                None if t.feature_dim == 0 => {
                    feature_tensors.insert(t.name.clone(), Tensor::zeros(&[t.count, 0]));
                }
                None => {
                    return Err(Error::InvalidGraph(format!("missing features for type `{}`", t.name)));
                }
            }
        }

        let mut seen_edge_types = HashMap::new();
        for e in &mut edges {
            if seen_edge_types.insert(e.edge_type.clone(), ()).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate edge type `{}`", e.edge_type)));
            }
            for ty in [&e.src_type, &e.dst_type] {
                if !counts.contains_key(ty.as_str()) {
                    return Err(Error::InvalidGraph(format!(
                        "edge type `{}` references unknown node type `{ty}`",
                        e.edge_type
                    )));
                }
            }
            let (ns, nd) = (counts[e.src_type.as_str()], counts[e.dst_type.as_str()]);
            for &[s, d] in &e.pairs {
                for (id, ty, count) in [(s, &e.src_type, ns), (d, &e.dst_type, nd)] {
                    if id >= count {
                        return Err(Error::DanglingEndpoint {
                            edge_type: e.edge_type.clone(),
                            node_type: ty.clone(),
                            id,
                            count,
                        });
                    }
                }
            }
            e.pairs.sort_unstable();
            e.pairs.dedup();
        }

        if let Some(l) = &labels {
            if l.len() != anchor.count {
                return Err(Error::InvalidGraph(format!(
                    "{} labels for {} anchor nodes",
                    l.len(),
                    anchor.count
                )));
            }
        }

        let graph = HeteroGraph {
            node_types,
            anchor_type,
            features: feature_tensors,
            edges,
            labels,
            metapaths,
        };
        for p in &graph.metapaths {
            graph.validate_metapath(p)?;
        }
        Ok(graph)
    }

    pub fn to_file(&self) -> GraphFile {
        let features = self
            .node_types
            .iter()
            .filter(|t| t.feature_dim > 0)
            .map(|t| {
                let f = &self.features[&t.name];
                (t.name.clone(), (0..f.rows()).map(|r| f.row(r).to_vec()).collect())
            })
            .collect();
        GraphFile {
            node_types: self.node_types.clone(),
            anchor_type: self.anchor_type.clone(),
            features,
            edges: self.edges.clone(),
            labels: self.labels.clone(),
            metapaths: self.metapaths.clone(),
        }
    }

    pub fn node_types(&self) -> &[NodeTypeSpec] {
        &self.node_types
    }

    pub fn anchor_type(&self) -> &str {
        &self.anchor_type
    }

    pub fn count(&self, node_type: &str) -> Option<usize> {
        self.node_type(node_type).map(|t| t.count)
    }

    pub fn num_anchors(&self) -> usize {
        self.count(&self.anchor_type).unwrap_or(0)
    }

    /// Total node count over all types.
    pub fn num_nodes(&self) -> usize {
        self.node_types.iter().map(|t| t.count).sum()
    }

    fn node_type(&self, name: &str) -> Option<&NodeTypeSpec> {
        self.node_types.iter().find(|t| t.name == name)
    }

    pub fn global_id(&self, node_type: &str, local: usize) -> Option<usize> {
        let mut offset = 0;
        for t in &self.node_types {
            if t.name == node_type {
                return (local < t.count).then_some(offset + local);
            }
            offset += t.count;
        }
        None
    }

    /// Type name and local id of a global node id.
    pub fn node_type_of(&self, global: usize) -> Option<(&str, usize)> {
        let mut offset = 0;
        for t in &self.node_types {
            if global < offset + t.count {
                return Some((&t.name, global - offset));
            }
            offset += t.count;
        }
        None
    }

    pub fn features(&self, node_type: &str) -> Option<&Tensor> {
        self.features.get(node_type)
    }

    pub fn anchor_features(&self) -> &Tensor {
        &self.features[&self.anchor_type]
    }

    pub fn edges(&self) -> &[EdgeSet] {
        &self.edges
    }

    pub fn edge_set(&self, edge_type: &str) -> Option<&EdgeSet> {
        self.edges.iter().find(|e| e.edge_type == edge_type)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }

    pub fn metapaths(&self) -> &[Metapath] {
        &self.metapaths
    }

    pub fn metapath(&self, name: &str) -> Option<&Metapath> {
        self.metapaths.iter().find(|p| p.name == name)
    }

    /// One semantic view per declared metapath, in declaration order.
    pub fn semantic_views(&self) -> Result<Vec<SemanticView>> {
        self.metapaths
            .iter()
            .map(|p| metapath_adjacency(self, p))
            .collect()
    }

    /// Checks that `p` is a palindromic anchor-to-anchor walk over known types.
    pub fn validate_metapath(&self, p: &Metapath) -> Result<()> {
        let fail = |reason: String| Error::InvalidMetapath {
            name: p.name.clone(),
            reason,
        };
        let n = p.node_types.len();
        if n < 3 || n.is_multiple_of(2) {
            return Err(fail(format!("needs an odd number (>= 3) of node types, got {n}")));
        }
        if p.edge_types.len() != n - 1 {
            return Err(fail(format!("{} node types need {} edge types", n, n - 1)));
        }
        for t in &p.node_types {
            if self.node_type(t).is_none() {
                return Err(fail(format!("unknown node type `{t}`")));
            }
        }
        if p.node_types[0] != self.anchor_type || p.node_types[n - 1] != self.anchor_type {
            return Err(fail(format!("must start and end at anchor type `{}`", self.anchor_type)));
        }
        if !p.node_types.iter().eq(p.node_types.iter().rev())
            || !p.edge_types.iter().eq(p.edge_types.iter().rev())
        {
            return Err(fail("only palindromic metapaths are supported".into()));
        }
        for (k, et) in p.edge_types.iter().enumerate() {
            let e = self
                .edge_set(et)
                .ok_or_else(|| fail(format!("unknown edge type `{et}`")))?;
            let (a, b) = (&p.node_types[k], &p.node_types[k + 1]);
            let forward = &e.src_type == a && &e.dst_type == b;
            let backward = &e.src_type == b && &e.dst_type == a;
            if !forward && !backward {
                return Err(fail(format!(
                    "edge type `{et}` ({} -> {}) cannot connect `{a}` to `{b}`",
                    e.src_type, e.dst_type
                )));
            }
        }
        Ok(())
    }
}
