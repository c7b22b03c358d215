//! Heterogeneous graph attention encoder.
//!
//! Each metapath view gets its own multi-head attention layer producing
//! view-specific embeddings `H^p`; a second attention over views combines
//! them into the aggregated embedding `H = sum_p beta_p H^p`.
//!
//! Attention logits are computed from projected features `W x`, i.e.
//! `e_ij = leaky_relu(a_src . W x_i + a_dst . W x_j)` restricted to the
//! metapath neighborhood, and messages are passed through `elu`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Mask, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Attention heads per view.
    pub heads: usize,
    /// Output embedding size; must be divisible by `heads`.
    pub dim: usize,
    /// Hidden size of the view-aggregation attention.
    pub attn_dim: usize,
    /// Negative slope of the leaky-relu on attention logits.
    pub slope: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            heads: 4,
            dim: 64,
            attn_dim: 128,
            slope: 0.2,
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> Result<usize> {
        if self.heads == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "embedding dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.attn_dim == 0 {
            return Err(Error::invalid("attn_dim must be positive"));
        }
        Ok(self.dim / self.heads)
    }
}

/// One attention head of a view layer. `weight` is `[feature_dim, head_dim]`;
/// the attention vector is `[attn_src; attn_dst]`, each `[head_dim, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHead<T> {
    pub weight: T,
    pub attn_src: T,
    pub attn_dst: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticLayer<T> {
    pub heads: Vec<AttentionHead<T>>,
}

/// View-aggregation attention: `weight` is `[dim, attn_dim]`, `bias` is
/// `[attn_dim]` and `query` is `[attn_dim, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregator<T> {
    pub weight: T,
    pub bias: T,
    pub query: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T> {
    pub layers: Vec<SemanticLayer<T>>,
    pub aggregator: Aggregator<T>,
    pub slope: f64,
}

/// Forward results. With `T = Var` the entries live on a tape.
#[derive(Clone, Debug)]
pub struct EncoderOutput<T> {
    /// `H^p`, one `[n, dim]` matrix per view.
    pub views: Vec<T>,
    /// `H`, `[n, dim]`.
    pub aggregated: T,
    /// `[1, |P|]` view weights.
    pub beta: T,
    /// Attention coefficients per view and head, each `[n, n]`.
    pub attention: Vec<Vec<T>>,
}

impl EncoderOutput<Var> {
    pub fn values(&self, tape: &Tape) -> EncoderOutput<Tensor> {
        let v = |x: &Var| tape.value(*x).clone();
        EncoderOutput {
            views: self.views.iter().map(v).collect(),
            aggregated: v(&self.aggregated),
            beta: v(&self.beta),
            attention: self.attention.iter().map(|hs| hs.iter().map(v).collect()).collect(),
        }
    }
}

pub(crate) fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize, shape: &[usize]) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

impl Encoder<Tensor> {
    pub fn init(cfg: &EncoderConfig, feature_dim: usize, n_views: usize, rng: &mut impl Rng) -> Result<Self> {
        let dh = cfg.head_dim()?;
        if n_views == 0 {
            return Err(Error::invalid("encoder needs at least one view"));
        }
        let layers = (0..n_views)
            .map(|_| SemanticLayer {
                heads: (0..cfg.heads)
                    .map(|_| AttentionHead {
                        weight: glorot(rng, feature_dim, dh, &[feature_dim, dh]),
                        attn_src: glorot(rng, 2 * dh, 1, &[dh, 1]),
                        attn_dst: glorot(rng, 2 * dh, 1, &[dh, 1]),
                    })
                    .collect(),
            })
            .collect();
        let aggregator = Aggregator {
            weight: glorot(rng, cfg.dim, cfg.attn_dim, &[cfg.dim, cfg.attn_dim]),
            bias: Tensor::zeros(&[cfg.attn_dim]),
            query: glorot(rng, cfg.attn_dim, 1, &[cfg.attn_dim, 1]),
        };
        Ok(Encoder {
            layers,
            aggregator,
            slope: cfg.slope,
        })
    }

    /// Forward pass on a scratch tape with every parameter held constant.
    pub fn forward_values(&self, features: &Tensor, masks: &[Arc<Mask>]) -> Result<EncoderOutput<Tensor>> {
        let mut tape = Tape::new();
        let bound = self.map(&mut |t| tape.constant(t.clone()));
        let x = tape.constant(features.clone());
        let out = bound.forward(&mut tape, x, masks)?;
        Ok(out.values(&tape))
    }
}

impl<T> Encoder<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Encoder<U> {
        Encoder {
            layers: self
                .layers
                .iter()
                .map(|l| SemanticLayer {
                    heads: l
                        .heads
                        .iter()
                        .map(|h| AttentionHead {
                            weight: f(&h.weight),
                            attn_src: f(&h.attn_src),
                            attn_dst: f(&h.attn_dst),
                        })
                        .collect(),
                })
                .collect(),
            aggregator: Aggregator {
                weight: f(&self.aggregator.weight),
                bias: f(&self.aggregator.bias),
                query: f(&self.aggregator.query),
            },
            slope: self.slope,
        }
    }

    /// Parameters in a fixed order, paired with stable names.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        for (p, l) in self.layers.iter().enumerate() {
            for (k, h) in l.heads.iter().enumerate() {
                out.push((format!("view{p}.head{k}.weight"), &h.weight));
                out.push((format!("view{p}.head{k}.attn_src"), &h.attn_src));
                out.push((format!("view{p}.head{k}.attn_dst"), &h.attn_dst));
            }
        }
        out.push(("aggregator.weight".into(), &self.aggregator.weight));
        out.push(("aggregator.bias".into(), &self.aggregator.bias));
        out.push(("aggregator.query".into(), &self.aggregator.query));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            for h in &mut l.heads {
                out.push(&mut h.weight);
                out.push(&mut h.attn_src);
                out.push(&mut h.attn_dst);
            }
        }
        out.push(&mut self.aggregator.weight);
        out.push(&mut self.aggregator.bias);
        out.push(&mut self.aggregator.query);
        out
    }
}

impl Encoder<Var> {
    pub fn forward(&self, tape: &mut Tape, features: Var, masks: &[Arc<Mask>]) -> Result<EncoderOutput<Var>> {
        if masks.len() != self.layers.len() {
            return Err(Error::shape(
                "encoder",
                format!("{} views for {} layers", masks.len(), self.layers.len()),
            ));
        }
        let mut views = Vec::with_capacity(masks.len());
        let mut attention = Vec::with_capacity(masks.len());
        for (layer, mask) in self.layers.iter().zip(masks) {
            let (h, alpha) = semantic_view_encode(tape, features, mask, layer, self.slope)?;
            views.push(h);
            attention.push(alpha);
        }
        let (aggregated, beta) = aggregate_semantics(tape, &views, &self.aggregator)?;
        Ok(EncoderOutput {
            views,
            aggregated,
            beta,
            attention,
        })
    }
}

/// Multi-head masked attention over one metapath view.
///
/// Returns `H^p` (`[n, heads * head_dim]`) and the per-head attention matrices.
pub fn semantic_view_encode(
    tape: &mut Tape,
    features: Var,
    mask: &Arc<Mask>,
    layer: &SemanticLayer<Var>,
    slope: f64,
) -> Result<(Var, Vec<Var>)> {
    let n = tape.value(features).rows();
    if mask.rows() != n || mask.cols() != n {
        return Err(Error::shape(
            "semantic_view_encode",
            format!("{}x{} mask for {n} nodes", mask.rows(), mask.cols()),
        ));
    }
    let ones_row = tape.constant(Tensor::filled(&[1, n], 1.0));
    let ones_col = tape.constant(Tensor::filled(&[n, 1], 1.0));
    let mut outs = Vec::with_capacity(layer.heads.len());
    let mut alphas = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        let z = tape.matmul(features, head.weight)?;
        let src = tape.matmul(z, head.attn_src)?;
        let dst = tape.matmul(z, head.attn_dst)?;
        // logits[i, j] = src[i] + dst[j]
        let rows = tape.matmul(src, ones_row)?;
        let dst_t = tape.transpose(dst)?;
        let cols = tape.matmul(ones_col, dst_t)?;
        let logits = tape.add(rows, cols)?;
        let logits = tape.leaky_relu(logits, slope)?;
        let alpha = tape.masked_softmax(logits, mask)?;
        let msg = tape.matmul(alpha, z)?;
        outs.push(tape.elu(msg)?);
        alphas.push(alpha);
    }
    Ok((tape.concat_last(&outs)?, alphas))
}

/// Softmax-weighted combination of view embeddings.
///
/// Each view is scored by `mean_i q . tanh(W^T h_i^p + b)`; returns the
/// aggregated `[n, dim]` embedding and the `[1, |P|]` weights.
pub fn aggregate_semantics(tape: &mut Tape, views: &[Var], agg: &Aggregator<Var>) -> Result<(Var, Var)> {
    let first = *views
        .first()
        .ok_or_else(|| Error::invalid("aggregate_semantics needs at least one view"))?;
    let shape = tape.value(first).shape().to_vec();
    if let Some(bad) = views.iter().find(|v| tape.value(**v).shape() != shape.as_slice()) {
        return Err(Error::shape(
            "aggregate_semantics",
            format!("{:?} vs {:?}", tape.value(*bad).shape(), shape),
        ));
    }
    let numel: usize = shape.iter().product();

    let mut scores = Vec::with_capacity(views.len());
    let mut columns = Vec::with_capacity(views.len());
    for &h in views {
        let proj = tape.matmul(h, agg.weight)?;
        let proj = tape.add(proj, agg.bias)?;
        let act = tape.tanh(proj)?;
        let per_node = tape.matmul(act, agg.query)?;
        let w = tape.mean(per_node)?;
        scores.push(tape.reshape(w, &[1, 1])?);
        columns.push(tape.reshape(h, &[numel, 1])?);
    }
    let scores = tape.concat_last(&scores)?;
    let beta = tape.softmax(scores)?;
    let stacked = tape.concat_last(&columns)?;
    let beta_col = tape.transpose(beta)?;
    let mixed = tape.matmul(stacked, beta_col)?;
    let aggregated = tape.reshape(mixed, &shape)?;
    Ok((aggregated, beta))
}
