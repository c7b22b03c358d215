//! Structure-aware hardness indexes built from view topology alone.
//!
//! Two measures rank how "hard" a negative is for an anchor: personalized
//! PageRank mass from the anchor, and the inner product of Laplacian
//! positional embeddings. Both are computed once before training.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::SemanticView;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PprConfig {
    /// Probability of returning to the anchor at each step.
    pub restart: f64,
    /// L1 change between iterates at which power iteration stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PprConfig {
    fn default() -> Self {
        PprConfig {
            restart: 0.15,
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

/// Personalized PageRank vectors for every node of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct PprIndex {
    restart: f64,
    /// `scores[v]` is the stationary distribution of a walk restarting at `v`.
    scores: Vec<Vec<f64>>,
    residuals: Vec<f64>,
}

impl PprIndex {
    pub fn restart(&self) -> f64 {
        self.restart
    }

    pub fn num_nodes(&self) -> usize {
        self.scores.len()
    }

    pub fn vector(&self, anchor: usize) -> &[f64] {
        &self.scores[anchor]
    }

    /// L1 fixed-point residual of each vector.
    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }
}

/// One walk step from distribution `s`: `out = P^T s` with `P` the
/// row-normalized adjacency.
fn walk_step(view: &SemanticView, s: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for (i, &mass) in s.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        let nbrs = view.neighbors(i);
        let share = mass / nbrs.len() as f64;
        for &j in nbrs {
            out[j] += share;
        }
    }
}

fn fixed_point_residual(view: &SemanticView, restart: f64, anchor: usize, s: &[f64]) -> f64 {
    let mut next = vec![0.0; s.len()];
    walk_step(view, s, &mut next);
    next.iter()
        .zip(s)
        .enumerate()
        .map(|(j, (w, x))| {
            let target = (1.0 - restart) * w + if j == anchor { restart } else { 0.0 };
            (target - x).abs()
        })
        .sum()
}

/// Power iteration for `s = (1 - c) P^T s + c e_v` from every node `v`.
pub fn ppr(view: &SemanticView, cfg: &PprConfig) -> Result<PprIndex> {
    let c = cfg.restart;
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::invalid(format!("restart probability must be in (0, 1), got {c}")));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::invalid("ppr tolerance must be positive"));
    }
    let n = view.num_nodes();
    if let Some(v) = (0..n).find(|&v| view.degree(v) == 0) {
        return Err(Error::InvalidGraph(format!(
            "node {v} of view {} has no out-neighbors",
            view.name()
        )));
    }
    let mut scores = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let mut next = vec![0.0; n];
    for anchor in 0..n {
        let mut s = vec![0.0; n];
        s[anchor] = 1.0;
        let mut converged = false;
        let mut change = f64::INFINITY;
        for _ in 0..cfg.max_iter {
            walk_step(view, &s, &mut next);
            change = 0.0;
            for (j, x) in next.iter_mut().enumerate() {
                *x *= 1.0 - c;
                if j == anchor {
                    *x += c;
                }
                change += (*x - s[j]).abs();
            }
            std::mem::swap(&mut s, &mut next);
            if change < cfg.tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NotConverged {
                iterations: cfg.max_iter,
                last_change: change,
            });
        }
        residuals.push(fixed_point_residual(view, c, anchor, &s));
        scores.push(s);
    }
    Ok(PprIndex {
        restart: c,
        scores,
        residuals,
    })
}

/// Smallest non-trivial eigenpairs of `I - D^{-1/2} A D^{-1/2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianPe {
    /// `[n, k]`, one eigenvector per column.
    vectors: Tensor,
    eigenvalues: Vec<f64>,
    trivial: usize,
}

impl LaplacianPe {
    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Number of zero eigenpairs dropped (one per connected component).
    pub fn trivial_count(&self) -> usize {
        self.trivial
    }

    pub fn embedding(&self, node: usize) -> &[f64] {
        self.vectors.row(node)
    }
}

/// Dense normalized Laplacian of a view. Nodes without neighbors get a zero
/// diagonal entry.
pub fn normalized_laplacian(view: &SemanticView) -> DMatrix<f64> {
    let n = view.num_nodes();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| match view.degree(i) {
            0 => 0.0,
            d => 1.0 / (d as f64).sqrt(),
        })
        .collect();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        if view.degree(i) > 0 {
            l[(i, i)] = 1.0;
        }
        for &j in view.neighbors(i) {
            l[(i, j)] -= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    l
}

pub fn laplacian_pe(view: &SemanticView, k: usize) -> Result<LaplacianPe> {
    let n = view.num_nodes();
    if !view.is_symmetric() {
        return Err(Error::InvalidGraph(format!("view {} is not symmetric", view.name())));
    }
    let trivial = view.component_count();
    let available = n - trivial;
    if k == 0 || k > available {
        return Err(Error::SpectrumExhausted {
            requested: k,
            available,
        });
    }
    let eig = SymmetricEigen::new(normalized_laplacian(view));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));

    let mut vectors = Tensor::zeros(&[n, k]);
    let mut eigenvalues = Vec::with_capacity(k);
    for (col, &idx) in order[trivial..trivial + k].iter().enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        canonical_sign(&mut v);
        for (i, x) in v.into_iter().enumerate() {
            vectors.data_mut()[i * k + col] = x;
        }
        eigenvalues.push(eig.eigenvalues[idx]);
    }
    Ok(LaplacianPe {
        vectors,
        eigenvalues,
        trivial,
    })
}

/// Flip `v` so its largest-magnitude entry is positive; near-ties go to the
/// lowest index.
fn canonical_sign(v: &mut [f64]) {
    let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(pos) = v.iter().position(|x| x.abs() >= peak - 1e-12) {
        if v[pos] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// A hardness measure over the nodes of one view.
#[derive(Clone, Debug, PartialEq)]
pub enum StructureIndex {
    Ppr(PprIndex),
    Pe(LaplacianPe),
}

impl StructureIndex {
    pub fn num_nodes(&self) -> usize {
        match self {
            StructureIndex::Ppr(p) => p.num_nodes(),
            StructureIndex::Pe(pe) => pe.vectors.rows(),
        }
    }

    /// Hardness of `node` as a negative for `anchor`.
    pub fn hardness(&self, node: usize, anchor: usize) -> Result<f64> {
        let n = self.num_nodes();
        if node == anchor || node >= n || anchor >= n {
            return Err(Error::invalid(format!(
                "hardness needs distinct nodes below {n}, got node {node} anchor {anchor}"
            )));
        }
        Ok(self.score(node, anchor))
    }

    fn score(&self, node: usize, anchor: usize) -> f64 {
        match self {
            StructureIndex::Ppr(p) => p.scores[anchor][node],
            StructureIndex::Pe(pe) => pe
                .embedding(node)
                .iter()
                .zip(pe.embedding(anchor))
                .map(|(a, b)| a * b)
                .sum(),
        }
    }

    /// Scores of every node against `anchor`; the anchor's own entry is kept.
    pub fn scores(&self, anchor: usize) -> Vec<f64> {
        (0..self.num_nodes()).map(|i| self.score(i, anchor)).collect()
    }
}

/// Default candidate-list length: `max(8, ceil(0.05 n))`, capped at `n - 1`.
pub fn default_candidates(n: usize) -> usize {
    8usize.max((0.05 * n as f64).ceil() as usize).min(n.saturating_sub(1))
}

/// All nodes except `anchor`, by descending score then ascending id.
pub fn ranked_negatives(scores: &[f64], anchor: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).filter(|&i| i != anchor).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ids
}

/// Per-anchor lists of the hardest negatives in one view.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateIndex {
    limit: usize,
    lists: Vec<Vec<usize>>,
}

impl CandidateIndex {
    /// Ranks negatives for each anchor by `scores(anchor)` (length `n`).
    pub fn from_scores(n: usize, limit: usize, mut scores: impl FnMut(usize) -> Vec<f64>) -> Result<Self> {
        if limit < 2 {
            return Err(Error::invalid(format!(
                "candidate lists need at least 2 entries for mixing, got {limit}"
            )));
        }
        if n < 3 {
            return Err(Error::invalid(format!("candidate lists need at least 3 nodes, got {n}")));
        }
        let len = limit.min(n - 1);
        let mut lists = Vec::with_capacity(n);
        for anchor in 0..n {
            let s = scores(anchor);
            if s.len() != n {
                return Err(Error::shape("candidate scores", format!("{} scores for {n} nodes", s.len())));
            }
            let mut ranked = ranked_negatives(&s, anchor);
            ranked.truncate(len);
            lists.push(ranked);
        }
        Ok(CandidateIndex { limit, lists })
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn num_nodes(&self) -> usize {
        self.lists.len()
    }

    pub fn candidates(&self, anchor: usize) -> &[usize] {
        &self.lists[anchor]
    }
}

pub fn build_candidates(index: &StructureIndex, limit: usize) -> Result<CandidateIndex> {
    CandidateIndex::from_scores(index.num_nodes(), limit, |a| index.scores(a))
}
