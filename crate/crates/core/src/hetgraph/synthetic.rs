use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EdgeSet, GraphFile, HeteroGraph, Metapath, NodeTypeSpec};
use crate::error::{Error, Result};

/// Planted-partition heterogeneous graph parameters.
///
/// Anchors (type `A`) and the nodes of every bridge type (`B0`, `B1`, ...)
/// are assigned round-robin to classes. An anchor links to a bridge node
/// with probability `p_in` when their classes agree and `p_out` otherwise.
/// Each bridge type yields one metapath `A-Bk-A`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_anchor: usize,
    pub bridges: Vec<usize>,
    pub n_classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_anchor: 150,
            bridges: vec![60, 60],
            n_classes: 3,
            p_in: 0.2,
            p_out: 0.02,
            feature_dim: 16,
            noise: 2.5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.p_in) || !prob(self.p_out) || self.p_in <= self.p_out {
            return Err(Error::invalid(format!(
                "need 0 <= p_out < p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::invalid("n_classes must be at least 2"));
        }
        if self.n_anchor < self.n_classes {
            return Err(Error::invalid("need at least one anchor per class"));
        }
        if self.bridges.is_empty() {
            return Err(Error::invalid("need at least one bridge type"));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be positive"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid(format!("noise must be a finite std-dev, got {}", self.noise)));
        }
        Ok(())
    }
}

pub fn synthetic_hg(cfg: &SyntheticConfig) -> Result<HeteroGraph> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let classes = cfg.n_classes;
    let labels: Vec<usize> = (0..cfg.n_anchor).map(|i| i % classes).collect();

    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..cfg.feature_dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    // scaled to unit variance per coordinate
    let scale = 1.0 / (1.0 + cfg.noise * cfg.noise).sqrt();
    let anchor_rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|&c| {
            means[c]
                .iter()
                .map(|m| scale * (m + cfg.noise * rng.sample::<f64, _>(StandardNormal)))
                .collect()
        })
        .collect();

    let mut node_types = vec![NodeTypeSpec {
        name: "A".into(),
        count: cfg.n_anchor,
        feature_dim: cfg.feature_dim,
    }];
    let mut edges = Vec::new();
    let mut metapaths = Vec::new();
    for (k, &count) in cfg.bridges.iter().enumerate() {
        let bridge = format!("B{k}");
        let edge_type = format!("A-{bridge}");
        let mut pairs = Vec::new();
        for (a, &ca) in labels.iter().enumerate() {
            for b in 0..count {
                let p = if b % classes == ca { cfg.p_in } else { cfg.p_out };
                if rng.gen_bool(p) {
                    pairs.push([a, b]);
                }
            }
        }
        metapaths.push(Metapath {
            name: format!("A-{bridge}-A"),
            node_types: vec!["A".into(), bridge.clone(), "A".into()],
            edge_types: vec![edge_type.clone(), edge_type.clone()],
        });
        edges.push(EdgeSet {
            edge_type,
            src_type: "A".into(),
            dst_type: bridge.clone(),
            pairs,
        });
        node_types.push(NodeTypeSpec {
            name: bridge,
            count,
            feature_dim: 0,
        });
    }

    let mut features = BTreeMap::new();
    features.insert("A".to_string(), anchor_rows);
    HeteroGraph::from_file(GraphFile {
        node_types,
        anchor_type: "A".into(),
        features,
        edges,
        labels: Some(labels),
        metapaths,
    })
}
