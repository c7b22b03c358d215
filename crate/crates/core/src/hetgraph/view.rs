use std::sync::Arc;

use super::{HeteroGraph, Metapath};
use crate::error::{Error, Result};
use crate::tensor::Mask;

/// Homogeneous graph over anchor-type nodes induced by one metapath.
///
/// Neighbor lists are sorted and duplicate-free. Views built from a
/// metapath always contain self-loops; views built directly from neighbor
/// lists (used for structural oracles) need not.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticView {
    name: String,
    neighbors: Vec<Vec<usize>>,
}

impl SemanticView {
    pub fn from_neighbors(name: impl Into<String>, mut neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbors.len();
        for (i, list) in neighbors.iter_mut().enumerate() {
            if let Some(&bad) = list.iter().find(|&&j| j >= n) {
                return Err(Error::InvalidGraph(format!("node {i} lists neighbor {bad} of {n}")));
            }
            list.sort_unstable();
            list.dedup();
        }
        Ok(SemanticView {
            name: name.into(),
            neighbors,
        })
    }

    /// Undirected view from an edge list, with optional self-loops on every node.
    pub fn from_edges(name: impl Into<String>, n: usize, edges: &[(usize, usize)], self_loops: bool) -> Result<Self> {
        let mut lists = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!("edge ({a}, {b}) outside {n} nodes")));
            }
            lists[a].push(b);
            lists[b].push(a);
        }
        if self_loops {
            for (i, l) in lists.iter_mut().enumerate() {
                l.push(i);
            }
        }
        Self::from_neighbors(name, lists)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Number of stored (directed) adjacency entries, self-loops included.
    pub fn nnz(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        self.neighbors
            .iter()
            .enumerate()
            .all(|(i, list)| list.iter().all(|&j| self.contains(j, i)))
    }

    pub fn has_self_loops(&self) -> bool {
        (0..self.num_nodes()).all(|i| self.contains(i, i))
    }

    /// Dense neighborhood mask for attention.
    pub fn mask(&self) -> Arc<Mask> {
        let n = self.num_nodes();
        let mut allowed = vec![false; n * n];
        for (i, list) in self.neighbors.iter().enumerate() {
            for &j in list {
                allowed[i * n + j] = true;
            }
        }
        Arc::new(Mask::new(n, n, allowed).expect("square mask"))
    }

    /// Connected-component label per node (treating entries as undirected),
    /// labels numbered in order of first appearance.
    pub fn components(&self) -> Vec<usize> {
        let n = self.num_nodes();
        let mut undirected = self.neighbors.clone();
        for (i, list) in self.neighbors.iter().enumerate() {
            for &j in list {
                undirected[j].push(i);
            }
        }
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for &v in &undirected[u] {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn component_count(&self) -> usize {
        self.components().into_iter().max().map_or(0, |m| m + 1)
    }
}

/// Builds the semantic view of `p`: `u` and `v` are neighbors iff some walk
/// following the metapath's type sequence joins them. Path multiplicity is
/// discarded and every anchor gets a self-loop.
pub fn metapath_adjacency(g: &HeteroGraph, p: &Metapath) -> Result<SemanticView> {
    g.validate_metapath(p)?;
    let steps: Vec<Vec<Vec<usize>>> = p
        .edge_types
        .iter()
        .enumerate()
        .map(|(k, et)| relation(g, &p.node_types[k], &p.node_types[k + 1], et))
        .collect();

    let n = g.num_anchors();
    let mut lists = Vec::with_capacity(n);
    let mut seen: Vec<Vec<bool>> = p
        .node_types
        .iter()
        .map(|t| vec![false; g.count(t).unwrap_or(0)])
        .collect();
    for u in 0..n {
        let mut frontier = vec![u];
        for (k, step) in steps.iter().enumerate() {
            let marks = &mut seen[k + 1];
            let mut next = Vec::new();
            for &x in &frontier {
                for &y in &step[x] {
                    if !marks[y] {
                        marks[y] = true;
                        next.push(y);
                    }
                }
            }
            for &y in &next {
                marks[y] = false;
            }
            frontier = next;
        }
        frontier.push(u);
        lists.push(frontier);
    }
    SemanticView::from_neighbors(p.name.clone(), lists)
}

/// Adjacency lists from `from` nodes to `to` nodes along `edge_type`,
/// traversed forwards or backwards as the declared endpoints require.
fn relation(g: &HeteroGraph, from: &str, to: &str, edge_type: &str) -> Vec<Vec<usize>> {
    let e = g.edge_set(edge_type).expect("validated metapath");
    let mut adj = vec![Vec::new(); g.count(from).unwrap_or(0)];
    if e.src_type == from && e.dst_type == to {
        for &[s, d] in &e.pairs {
            adj[s].push(d);
        }
    }
    if e.src_type == to && e.dst_type == from {
        for &[s, d] in &e.pairs {
            adj[d].push(s);
        }
    }
    for l in &mut adj {
        l.sort_unstable();
        l.dedup();
    }
    adj
}
