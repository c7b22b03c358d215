//! Training, evaluation and run management.

mod checkpoint;
mod eval;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_run, read_tensors, save_run, write_tensors, RunManifest};
pub use eval::{f1_scores, knn_eval, knn_predict, metrics_csv, stratified_split, EvalConfig, EvalReport, SplitScore};

use crate::contrast::{total_objective, ContrastConfig, MixupPool, NegativePlan, ProjectionHead, Variant};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::hetgraph::{load_graph, synthetic_hg, HeteroGraph, SemanticView, SyntheticConfig};
use crate::structure::{build_candidates, laplacian_pe, ppr, CandidateIndex, PprConfig, StructureIndex};
use crate::tensor::{Adam, AdamConfig, Mask, Tape, Tensor, Var};

const INIT_STREAM: u64 = 0;
const MIXUP_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;

/// Independent random stream `stream` derived from `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn split_rng(seed: u64) -> ChaCha8Rng {
    rng_stream(seed, SPLIT_STREAM)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Graph JSON file; when absent a synthetic graph is generated.
    pub graph: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
    /// Metapath names to use; empty means all.
    pub metapaths: Vec<String>,
    pub encoder: EncoderConfig,
    pub contrast: ContrastConfig,
    pub ppr: PprConfig,
    /// Laplacian positional embedding size.
    pub pe_dim: usize,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    /// Stop after this many epochs without a new best loss; 0 disables.
    pub patience: usize,
    pub seed: u64,
    pub eval: EvalConfig,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            graph: None,
            synthetic: SyntheticConfig::default(),
            metapaths: Vec::new(),
            encoder: EncoderConfig::default(),
            contrast: ContrastConfig::default(),
            ppr: PprConfig::default(),
            pe_dim: 8,
            optimizer: AdamConfig::default(),
            epochs: 400,
            patience: 50,
            seed: 0,
            eval: EvalConfig::default(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn load_graph(&self) -> Result<HeteroGraph> {
        match &self.graph {
            Some(path) => load_graph(path),
            None => synthetic_hg(&self.synthetic),
        }
    }

    /// The semantic views selected by `metapaths`, in configuration order.
    pub fn views(&self, graph: &HeteroGraph) -> Result<Vec<SemanticView>> {
        let all = graph.semantic_views()?;
        if self.metapaths.is_empty() {
            return Ok(all);
        }
        self.metapaths
            .iter()
            .map(|name| {
                all.iter()
                    .find(|v| v.name() == name)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("metapath {name:?} not found in graph")))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.head_dim()?;
        self.contrast.validate()?;
        self.eval.validate()?;
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        Ok(())
    }
}

/// Every trainable tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub encoder: Encoder<T>,
    pub head: ProjectionHead<T>,
}

impl ModelParams<Tensor> {
    pub fn init(cfg: &EncoderConfig, feature_dim: usize, n_views: usize, seed: u64) -> Result<Self> {
        let mut rng = rng_stream(seed, INIT_STREAM);
        let encoder = Encoder::init(cfg, feature_dim, n_views, &mut rng)?;
        let head = ProjectionHead::init(cfg.dim, &mut rng);
        Ok(ModelParams { encoder, head })
    }
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            encoder: self.encoder.map(f),
            head: self.head.map(f),
        }
    }

    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = self.encoder.named();
        out.extend(self.head.named());
        out
    }

    /// Same order as [`ModelParams::named`].
    pub fn params_mut(&mut self) -> Vec<&mut T> {
        let mut out = self.encoder.params_mut();
        out.extend(self.head.params_mut());
        out
    }
}

/// Everything derived from the graph before training starts.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub features: Tensor,
    pub labels: Option<Vec<usize>>,
    pub views: Vec<SemanticView>,
    pub masks: Vec<Arc<Mask>>,
    /// Structural candidate lists; empty for variants that do not use them.
    pub candidates: Vec<CandidateIndex>,
}

impl Prepared {
    pub fn new(cfg: &RunConfig, graph: &HeteroGraph) -> Result<Self> {
        let views = cfg.views(graph)?;
        let n = graph.num_anchors();
        let limit = cfg.contrast.candidates(n);
        let needs_structure = cfg.contrast.negatives(n) > 0 && cfg.contrast.pool == MixupPool::Candidates;
        let candidates = match cfg.contrast.variant {
            Variant::Pe | Variant::Ppr if needs_structure => views
                .iter()
                .map(|v| build_candidates(&structure_index(cfg, v)?, limit))
                .collect::<Result<_>>()?,
            _ => Vec::new(),
        };
        Ok(Prepared {
            features: graph.anchor_features().clone(),
            labels: graph.labels().map(|l| l.to_vec()),
            masks: views.iter().map(|v| v.mask()).collect(),
            views,
            candidates,
        })
    }
}

/// Hardness index for `view` under the configured variant (PPR or PE).
pub fn structure_index(cfg: &RunConfig, view: &SemanticView) -> Result<StructureIndex> {
    match cfg.contrast.variant {
        Variant::Ppr => Ok(StructureIndex::Ppr(ppr(view, &cfg.ppr)?)),
        Variant::Pe => Ok(StructureIndex::Pe(laplacian_pe(view, cfg.pe_dim)?)),
        v => Err(Error::invalid(format!("variant {v} has no structural index"))),
    }
}

/// Candidate lists ranked by inner products of the current view embeddings.
fn semantic_candidates(views: &[Tensor], limit: usize) -> Result<Vec<CandidateIndex>> {
    views
        .iter()
        .map(|h| {
            let gram = h.matmul(&h.transpose()?)?;
            let n = h.rows();
            CandidateIndex::from_scores(n, limit, |a| gram.row(a).to_vec())
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ModelParams<Tensor>,
    /// Aggregated embeddings from a forward pass with the final parameters.
    pub embeddings: Tensor,
    /// Objective value at the start of each epoch.
    pub losses: Vec<f64>,
}

impl TrainOutput {
    pub fn epochs_run(&self) -> usize {
        self.losses.len()
    }

    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }
}

pub fn train(cfg: &RunConfig) -> Result<TrainOutput> {
    let graph = cfg.load_graph()?;
    let prepared = Prepared::new(cfg, &graph)?;
    train_prepared(cfg, &prepared)
}

pub fn train_prepared(cfg: &RunConfig, data: &Prepared) -> Result<TrainOutput> {
    cfg.validate()?;
    let n = data.features.rows();
    let n_views = data.views.len();
    let m = cfg.contrast.negatives(n);
    let limit = cfg.contrast.candidates(n);

    let mut params = ModelParams::init(&cfg.encoder, data.features.cols(), n_views, cfg.seed)?;
    let mut adam = Adam::new(cfg.optimizer, params.named().into_iter().map(|(_, t)| t));
    let mut mix_rng = rng_stream(cfg.seed, MIXUP_STREAM);

    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let bound = params.map(&mut |t| tape.param(t.clone()));
        let x = tape.constant(data.features.clone());
        let out = bound.encoder.forward(&mut tape, x, &data.masks)?;

        let plan = if m == 0 {
            NegativePlan::empty(n_views)
        } else {
            let semantic;
            let candidates = match (cfg.contrast.variant, cfg.contrast.pool) {
                (Variant::Sem, MixupPool::Candidates) => {
                    let values: Vec<Tensor> = out.views.iter().map(|v| tape.value(*v).clone()).collect();
                    semantic = semantic_candidates(&values, limit)?;
                    &semantic
                }
                _ => &data.candidates,
            };
            NegativePlan::sample(n, n_views, m, cfg.contrast.alpha, cfg.contrast.pool, candidates, &mut mix_rng)?
        };

        let loss = total_objective(&mut tape, &out, &bound.head, &plan, cfg.contrast.tau)?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("loss {value}"),
            });
        }
        tape.backward(loss)?;
        let grads: Vec<Tensor> = bound.named().into_iter().map(|(_, v)| tape.grad_or_zeros(*v)).collect();
        adam.step(&mut params.params_mut(), &grads)?;
        losses.push(value);

        if value < best {
            best = value;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                break;
            }
        }
    }

    let embeddings = params.encoder.forward_values(&data.features, &data.masks)?.aggregated;
    Ok(TrainOutput {
        params,
        embeddings,
        losses,
    })
}

/// Gradients of the objective for fixed parameters and negatives, keyed by
/// parameter name. Used for gradient checking.
pub fn objective_gradients(
    params: &ModelParams<Tensor>,
    features: &Tensor,
    masks: &[Arc<Mask>],
    plan: &NegativePlan,
    tau: f64,
) -> Result<(f64, Vec<(String, Tensor)>)> {
    let mut tape = Tape::new();
    let bound: ModelParams<Var> = params.map(&mut |t| tape.param(t.clone()));
    let x = tape.constant(features.clone());
    let out = bound.encoder.forward(&mut tape, x, masks)?;
    let loss = total_objective(&mut tape, &out, &bound.head, plan, tau)?;
    let value = tape.value(loss).item()?;
    tape.backward(loss)?;
    let grads = bound
        .named()
        .into_iter()
        .map(|(name, v)| (name, tape.grad_or_zeros(*v)))
        .collect();
    Ok((value, grads))
}

/// Objective value only, for the same inputs as [`objective_gradients`].
pub fn objective_value(
    params: &ModelParams<Tensor>,
    features: &Tensor,
    masks: &[Arc<Mask>],
    plan: &NegativePlan,
    tau: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound: ModelParams<Var> = params.map(&mut |t| tape.constant(t.clone()));
    let x = tape.constant(features.clone());
    let out = bound.encoder.forward(&mut tape, x, masks)?;
    let loss = total_objective(&mut tape, &out, &bound.head, plan, tau)?;
    tape.value(loss).item()
}

/// One trained-and-evaluated run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub train: TrainOutput,
    pub report: EvalReport,
}

pub fn train_and_eval(cfg: &RunConfig, data: &Prepared) -> Result<RunResult> {
    let labels = data
        .labels
        .as_deref()
        .ok_or_else(|| Error::invalid("evaluation needs labels on the anchor type"))?;
    let train = train_prepared(cfg, data)?;
    let mut report = knn_eval(&train.embeddings, labels, &cfg.eval, &mut split_rng(cfg.seed))?;
    report.losses = train.losses.clone();
    Ok(RunResult {
        variant: cfg.contrast.variant,
        seed: cfg.seed,
        train,
        report,
    })
}

/// Trains every variant in `variants` on the same graph and seed.
pub fn ablate(cfg: &RunConfig, variants: &[Variant]) -> Result<Vec<RunResult>> {
    let graph = cfg.load_graph()?;
    variants
        .iter()
        .map(|&variant| {
            let mut run = cfg.clone();
            run.contrast.variant = variant;
            let data = Prepared::new(&run, &graph)?;
            train_and_eval(&run, &data)
        })
        .collect()
}

/// Fixed-width summary table, one row per run.
pub fn summary_table(results: &[RunResult]) -> String {
    let mut out = format!(
        "{:<8} {:>6} {:>17} {:>17} {:>12} {:>7}\n",
        "variant", "seed", "micro_f1", "macro_f1", "final_loss", "epochs"
    );
    for r in results {
        out.push_str(&format!(
            "{:<8} {:>6} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4} {:>12.6} {:>7}\n",
            r.variant.as_str(),
            r.seed,
            r.report.micro_mean,
            r.report.micro_std,
            r.report.macro_mean,
            r.report.macro_std,
            r.train.final_loss(),
            r.train.epochs_run(),
        ));
    }
    out
}
