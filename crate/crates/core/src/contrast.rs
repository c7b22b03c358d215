//! View-to-aggregate contrastive objective with synthesized hard negatives.
//!
//! For every anchor `i` and view `p`, the view embedding `h^p_i` and the
//! aggregated embedding `h_i` form a positive pair. The negative bank holds
//! every other node's view embedding, every other node's aggregated
//! embedding, and `M` mixup samples built from hard candidates.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::encoder::{glorot, EncoderOutput};
use crate::error::{Error, Result};
use crate::structure::CandidateIndex;
use crate::tensor::{Mask, Tape, Tensor, Var};

/// Two-layer MLP `g(x) = W2 elu(W1 x + b1) + b2`, shared across views and
/// directions. Weights are stored input-major (`[d, d]`, applied as `x W`).
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHead<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

impl ProjectionHead<Tensor> {
    pub fn init(dim: usize, rng: &mut impl Rng) -> Self {
        ProjectionHead {
            w1: glorot(rng, dim, dim, &[dim, dim]),
            b1: Tensor::zeros(&[dim]),
            w2: glorot(rng, dim, dim, &[dim, dim]),
            b2: Tensor::zeros(&[dim]),
        }
    }

    /// Identity weights, zero biases. Acts as `elu`.
    pub fn identity(dim: usize) -> Self {
        ProjectionHead {
            w1: Tensor::eye(dim),
            b1: Tensor::zeros(&[dim]),
            w2: Tensor::eye(dim),
            b2: Tensor::zeros(&[dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.w1.rows()
    }
}

impl<T> ProjectionHead<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ProjectionHead<U> {
        ProjectionHead {
            w1: f(&self.w1),
            b1: f(&self.b1),
            w2: f(&self.w2),
            b2: f(&self.b2),
        }
    }

    pub fn named(&self) -> Vec<(String, &T)> {
        vec![
            ("head.w1".into(), &self.w1),
            ("head.b1".into(), &self.b1),
            ("head.w2".into(), &self.w2),
            ("head.b2".into(), &self.b2),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut T> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

impl ProjectionHead<Var> {
    /// First affine layer, before the nonlinearity.
    pub fn hidden(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let u = tape.matmul(x, self.w1)?;
        tape.add(u, self.b1)
    }

    /// Remaining layers applied to `hidden` output.
    pub fn finish(&self, tape: &mut Tape, hidden: Var) -> Result<Var> {
        let a = tape.elu(hidden)?;
        let y = tape.matmul(a, self.w2)?;
        tape.add(y, self.b2)
    }

    pub fn project(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let u = self.hidden(tape, x)?;
        self.finish(tape, u)
    }

    /// Unit-norm projections of the rows of `x`.
    pub fn embed(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let g = self.project(tape, x)?;
        tape.normalize_rows(g)
    }
}

/// Cosine similarity of the projections of `u` and `v`.
pub fn critic(head: &ProjectionHead<Tensor>, u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() || u.len() != head.dim() {
        return Err(Error::shape(
            "critic",
            format!("{} and {} for head dim {}", u.len(), v.len(), head.dim()),
        ));
    }
    let mut tape = Tape::new();
    let head = head.map(&mut |t| tape.constant(t.clone()));
    let x = tape.constant(Tensor::from_rows(&[u.to_vec(), v.to_vec()])?);
    let z = head.embed(&mut tape, x)?;
    let z = tape.value(z);
    Ok(z.row(0).iter().zip(z.row(1)).map(|(a, b)| a * b).sum())
}

/// Source of negative candidates for one anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Intra- and inter-view negatives only.
    None,
    /// Candidates ranked by inner products of current view embeddings.
    Sem,
    /// Candidates ranked by Laplacian positional embedding similarity.
    Pe,
    /// Candidates ranked by personalized PageRank.
    Ppr,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::None, Variant::Sem, Variant::Pe, Variant::Ppr];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::None => "none",
            Variant::Sem => "sem",
            Variant::Pe => "pe",
            Variant::Ppr => "ppr",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}, expected none|sem|pe|ppr")))
    }
}

/// Where mixup endpoints are drawn from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixupPool {
    /// The anchor's top-T hard candidates in the same view.
    #[default]
    Candidates,
    /// The full intra- plus inter-view negative set.
    Bank,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastConfig {
    pub tau: f64,
    /// Synthesized negatives per anchor and view; `None` picks `min(256, n / 4)`.
    pub m: Option<usize>,
    /// Candidate-list length; `None` picks `max(8, ceil(0.05 n))`.
    pub t: Option<usize>,
    /// Beta(alpha, alpha) parameter for mixing weights.
    pub alpha: f64,
    pub variant: Variant,
    pub pool: MixupPool,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            tau: 0.5,
            m: None,
            t: None,
            alpha: 1.0,
            variant: Variant::Pe,
            pool: MixupPool::Candidates,
        }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Synthesized negatives per anchor for a graph of `n` anchors.
    pub fn negatives(&self, n: usize) -> usize {
        match self.variant {
            Variant::None => 0,
            _ => self.m.unwrap_or_else(|| 256.min(n / 4)),
        }
    }

    pub fn candidates(&self, n: usize) -> usize {
        self.t.unwrap_or_else(|| crate::structure::default_candidates(n))
    }
}

/// A row of the mixing source: view embedding or aggregated embedding of a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endpoint {
    View(usize),
    Aggregated(usize),
}

impl Endpoint {
    /// Row in `concat_rows([H^p, H])` for `n` nodes.
    pub fn row(&self, n: usize) -> usize {
        match *self {
            Endpoint::View(j) => j,
            Endpoint::Aggregated(j) => n + j,
        }
    }
}

/// `weight * first + (1 - weight) * second`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mixup {
    pub first: Endpoint,
    pub second: Endpoint,
    pub weight: f64,
}

/// Draws `m` mixups, each from two distinct pool entries chosen uniformly
/// with a `Beta(alpha, alpha)` weight.
pub fn sample_mixups(pool: &[Endpoint], m: usize, alpha: f64, rng: &mut impl Rng) -> Result<Vec<Mixup>> {
    if m == 0 {
        return Ok(Vec::new());
    }
    if pool.len() < 2 {
        return Err(Error::invalid(format!(
            "mixup needs at least 2 candidates, got {}",
            pool.len()
        )));
    }
    let beta = if alpha == 1.0 {
        None
    } else {
        Some(Beta::new(alpha, alpha).map_err(|e| Error::invalid(format!("beta({alpha}): {e}")))?)
    };
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let a = rng.gen_range(0..pool.len());
        let mut b = rng.gen_range(0..pool.len() - 1);
        if b >= a {
            b += 1;
        }
        let weight = match &beta {
            Some(d) => d.sample(rng),
            None => rng.gen::<f64>(),
        };
        out.push(Mixup {
            first: pool[a],
            second: pool[b],
            weight,
        });
    }
    Ok(out)
}

/// Mixes `m` pairs of rows of `embeddings` drawn from `candidates`.
pub fn synthesize_negatives(
    candidates: &[usize],
    embeddings: &Tensor,
    m: usize,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let pool: Vec<Endpoint> = candidates.iter().map(|&j| Endpoint::View(j)).collect();
    let mixups = sample_mixups(&pool, m, alpha, rng)?;
    Ok(mix_values(embeddings, &mixups))
}

pub fn mix_values(embeddings: &Tensor, mixups: &[Mixup]) -> Tensor {
    let d = embeddings.cols();
    let mut data = Vec::with_capacity(mixups.len() * d);
    for mx in mixups {
        let (a, b) = (embeddings.row(mx.first.row(0)), embeddings.row(mx.second.row(0)));
        data.extend(a.iter().zip(b).map(|(x, y)| mx.weight * x + (1.0 - mx.weight) * y));
    }
    Tensor::from_parts(vec![mixups.len(), d], data)
}

/// The negatives contrasted against one anchor in one view.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeBank {
    pub anchor: usize,
    /// Other nodes' view embeddings.
    pub intra: Vec<usize>,
    /// Other nodes' aggregated embeddings.
    pub inter: Vec<usize>,
    pub synthesized: Vec<Mixup>,
}

impl NegativeBank {
    pub fn assemble(anchor: usize, n: usize, synthesized: Vec<Mixup>) -> Result<Self> {
        if anchor >= n {
            return Err(Error::invalid(format!("anchor {anchor} of {n} nodes")));
        }
        let others: Vec<usize> = (0..n).filter(|&j| j != anchor).collect();
        Ok(NegativeBank {
            anchor,
            intra: others.clone(),
            inter: others,
            synthesized,
        })
    }

    pub fn len(&self) -> usize {
        self.intra.len() + self.inter.len() + self.synthesized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pool for [`MixupPool::Bank`] sampling: every real negative.
    pub fn endpoints(&self) -> Vec<Endpoint> {
        let intra = self.intra.iter().map(|&j| Endpoint::View(j));
        intra.chain(self.inter.iter().map(|&j| Endpoint::Aggregated(j))).collect()
    }
}

/// Mixups for every view and anchor, anchor-major: `views[p][i * m + k]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NegativePlan {
    m: usize,
    views: Vec<Vec<Mixup>>,
}

impl NegativePlan {
    /// No synthesized negatives in any of `n_views` views.
    pub fn empty(n_views: usize) -> Self {
        NegativePlan {
            m: 0,
            views: vec![Vec::new(); n_views],
        }
    }

    pub fn new(m: usize, views: Vec<Vec<Mixup>>) -> Result<Self> {
        let n_rows = views.first().map_or(0, |v| v.len());
        if views.iter().any(|v| v.len() != n_rows) || (m == 0 && n_rows != 0) || (m > 0 && !n_rows.is_multiple_of(m)) {
            return Err(Error::invalid("negative plan rows do not match m"));
        }
        Ok(NegativePlan { m, views })
    }

    /// Samples a plan. `candidates[p]` is required for the candidate pool.
    pub fn sample(
        n: usize,
        n_views: usize,
        m: usize,
        alpha: f64,
        pool: MixupPool,
        candidates: &[CandidateIndex],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if m == 0 {
            return Ok(Self::empty(n_views));
        }
        if pool == MixupPool::Candidates && candidates.len() != n_views {
            return Err(Error::invalid(format!(
                "{} candidate indexes for {n_views} views",
                candidates.len()
            )));
        }
        let mut views = Vec::with_capacity(n_views);
        for p in 0..n_views {
            let mut rows = Vec::with_capacity(n * m);
            for i in 0..n {
                let endpoints: Vec<Endpoint> = match pool {
                    MixupPool::Candidates => {
                        if candidates[p].num_nodes() != n {
                            return Err(Error::invalid("candidate index size does not match graph"));
                        }
                        candidates[p].candidates(i).iter().map(|&j| Endpoint::View(j)).collect()
                    }
                    MixupPool::Bank => NegativeBank::assemble(i, n, Vec::new())?.endpoints(),
                };
                rows.extend(sample_mixups(&endpoints, m, alpha, rng)?);
            }
            views.push(rows);
        }
        Ok(NegativePlan { m, views })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn mixups(&self, view: usize, anchor: usize) -> &[Mixup] {
        &self.views[view][anchor * self.m..(anchor + 1) * self.m]
    }

    pub fn bank(&self, view: usize, anchor: usize, n: usize) -> Result<NegativeBank> {
        NegativeBank::assemble(anchor, n, self.mixups(view, anchor).to_vec())
    }
}

/// Which logits enter each row's log-sum-exp: `[cross | intra | synthesized]`
/// with the intra diagonal removed. The positive sits on the cross diagonal.
pub fn logit_mask(n: usize, m: usize) -> Mask {
    let cols = 2 * n + m;
    let mut allowed = vec![true; n * cols];
    for i in 0..n {
        allowed[i * cols + n + i] = false;
    }
    Mask::new(n, cols, allowed).expect("mask dimensions are consistent")
}

/// One direction of the batched InfoNCE: rows of `anchors` against their
/// positives (cross diagonal) and the remaining bank. Returns per-anchor losses `[n]`.
fn directional_loss(
    tape: &mut Tape,
    cross: Var,
    intra: Var,
    synth: Option<Var>,
    positives: Var,
    tau: f64,
    mask: &Arc<Mask>,
) -> Result<Var> {
    let mut parts = vec![cross, intra];
    parts.extend(synth);
    let logits = tape.concat_last(&parts)?;
    let logits = tape.scale(logits, 1.0 / tau)?;
    let lse = tape.logsumexp(logits, Some(mask))?;
    let pos = tape.scale(positives, 1.0 / tau)?;
    tape.sub(lse, pos)
}

/// Symmetric contrastive loss averaged over anchors and views.
pub fn total_objective(
    tape: &mut Tape,
    out: &EncoderOutput<Var>,
    head: &ProjectionHead<Var>,
    plan: &NegativePlan,
    tau: f64,
) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    if plan.num_views() != out.views.len() {
        return Err(Error::invalid(format!(
            "plan covers {} views, encoder produced {}",
            plan.num_views(),
            out.views.len()
        )));
    }
    let n = tape.value(out.aggregated).rows();
    let m = plan.m;
    if n < 2 && m == 0 {
        return Err(Error::invalid("empty negative bank: need at least 2 nodes or m > 0"));
    }
    if plan.views.iter().any(|v| v.len() != n * m) {
        return Err(Error::invalid("negative plan does not match node count"));
    }
    let mask = Arc::new(logit_mask(n, m));

    let agg_hidden = head.hidden(tape, out.aggregated)?;
    let za = head.finish(tape, agg_hidden)?;
    let za = tape.normalize_rows(za)?;
    let za_t = tape.transpose(za)?;
    let agg_sim = tape.matmul(za, za_t)?;

    let mut view_losses = Vec::with_capacity(out.views.len());
    for (p, &hp) in out.views.iter().enumerate() {
        let view_hidden = head.hidden(tape, hp)?;
        let zp = head.finish(tape, view_hidden)?;
        let zp = tape.normalize_rows(zp)?;

        let synth = if m > 0 {
            // the first layer is affine, so mixing its outputs equals
            // projecting the mixed embeddings
            let source = tape.concat_rows(&[view_hidden, agg_hidden])?;
            let entries: Vec<(usize, usize, f64)> = plan.views[p]
                .iter()
                .map(|mx| (mx.first.row(n), mx.second.row(n), mx.weight))
                .collect();
            let mixed = tape.mix_rows(source, &entries)?;
            let y = head.finish(tape, mixed)?;
            Some(tape.normalize_rows(y)?)
        } else {
            None
        };

        let cross = tape.matmul(zp, za_t)?;
        let zp_t = tape.transpose(zp)?;
        let view_sim = tape.matmul(zp, zp_t)?;
        let prod = tape.mul(zp, za)?;
        let positives = tape.sum_last(prod)?;

        let synth_view = synth.map(|y| tape.group_dot(zp, y)).transpose()?;
        let forward = directional_loss(tape, cross, view_sim, synth_view, positives, tau, &mask)?;

        let cross_t = tape.transpose(cross)?;
        let synth_agg = synth.map(|y| tape.group_dot(za, y)).transpose()?;
        let backward = directional_loss(tape, cross_t, agg_sim, synth_agg, positives, tau, &mask)?;

        let both = tape.add(forward, backward)?;
        let mean = tape.mean(both)?;
        view_losses.push(tape.scale(mean, 0.5)?);
    }
    let stacked = tape.concat_last(&view_losses)?;
    tape.mean(stacked)
}

/// InfoNCE for a single anchor: `-log(e^{s+/tau} / (e^{s+/tau} + sum_b e^{s_b/tau}))`
/// with `s` the critic. `anchor` and `positive` are `[1, d]`, `bank` is `[B, d]`.
pub fn info_nce(
    tape: &mut Tape,
    anchor: Var,
    positive: Var,
    bank: Var,
    tau: f64,
    head: &ProjectionHead<Var>,
) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    if tape.value(bank).rows() == 0 {
        return Err(Error::invalid("empty negative bank"));
    }
    let za = head.embed(tape, anchor)?;
    let others = tape.concat_rows(&[positive, bank])?;
    let zo = head.embed(tape, others)?;
    let zo_t = tape.transpose(zo)?;
    let sims = tape.matmul(za, zo_t)?;
    let logits = tape.scale(sims, 1.0 / tau)?;
    let lse = tape.logsumexp(logits, None)?;
    let mut pick = vec![0.0; tape.value(logits).len()];
    pick[0] = 1.0;
    let pick = tape.constant(Tensor::new(vec![1, pick.len()], pick)?);
    let pos = tape.mul(logits, pick)?;
    let pos = tape.sum(pos)?;
    tape.sub(lse, pos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn critic_self_and_orthogonal() {
        let head = ProjectionHead::init(4, &mut rng(1));
        let u = [0.3, -0.2, 0.9, 0.1];
        assert!((critic(&head, &u, &u).unwrap() - 1.0).abs() < 1e-12);
        let id = ProjectionHead::identity(2);
        assert!(critic(&id, &[1.0, 0.0], &[0.0, 2.0]).unwrap().abs() < 1e-15);
        assert!(critic(&id, &[1.0, 0.0], &[0.0]).is_err());
        assert!(critic(&id, &[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn identity_head_is_plain_cosine_on_positive_inputs() {
        let mut r = rng(2);
        let id = ProjectionHead::identity(5);
        for _ in 0..10 {
            let u: Vec<f64> = (0..5).map(|_| r.gen_range(0.01..1.0)).collect();
            let v: Vec<f64> = (0..5).map(|_| r.gen_range(0.01..1.0)).collect();
            let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((critic(&id, &u, &v).unwrap() - dot / (nu * nv)).abs() < 1e-14);
        }
    }

    #[test]
    fn mixup_boundaries() {
        let e = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mx = |w| Mixup {
            first: Endpoint::View(0),
            second: Endpoint::View(1),
            weight: w,
        };
        assert_eq!(mix_values(&e, &[mx(0.5)]).data(), &[0.5, 0.5]);
        assert_eq!(mix_values(&e, &[mx(1.0)]).data(), &[1.0, 0.0]);
    }

    #[test]
    fn synthesized_points_lie_on_segments() {
        let mut r = rng(3);
        let e = random(&mut r, 10, 6);
        let cands = [2, 5, 7, 9];
        let mixups = sample_mixups(
            &cands.iter().map(|&j| Endpoint::View(j)).collect::<Vec<_>>(),
            50,
            1.0,
            &mut rng(4),
        )
        .unwrap();
        let y = mix_values(&e, &mixups);
        for (k, mx) in mixups.iter().enumerate() {
            let (a, b) = (e.row(mx.first.row(0)), e.row(mx.second.row(0)));
            assert_ne!(mx.first, mx.second);
            assert!(cands.contains(&mx.first.row(0)) && cands.contains(&mx.second.row(0)));
            // least-squares lambda for y = b + lambda (a - b)
            let diff: Vec<f64> = a.iter().zip(b).map(|(x, z)| x - z).collect();
            let rhs: Vec<f64> = y.row(k).iter().zip(b).map(|(x, z)| x - z).collect();
            let lam = diff.iter().zip(&rhs).map(|(p, q)| p * q).sum::<f64>() / diff.iter().map(|p| p * p).sum::<f64>();
            assert!((0.0..=1.0).contains(&lam));
            let resid = y.row(k)
                .iter()
                .zip(b)
                .zip(&diff)
                .map(|((yv, bv), dv)| (yv - bv - lam * dv).abs())
                .fold(0.0, f64::max);
            assert!(resid < 1e-10);
        }
        // same seed, same samples
        let again = synthesize_negatives(&cands, &e, 50, 1.0, &mut rng(4)).unwrap();
        assert_eq!(again, y);
        assert!(synthesize_negatives(&[3], &e, 2, 1.0, &mut rng(4)).is_err());
        assert_eq!(synthesize_negatives(&[3], &e, 0, 1.0, &mut rng(4)).unwrap().rows(), 0);
    }

    #[test]
    fn beta_weights_stay_in_unit_interval() {
        let pool = [Endpoint::View(0), Endpoint::Aggregated(0)];
        let mixups = sample_mixups(&pool, 200, 0.4, &mut rng(5)).unwrap();
        assert!(mixups.iter().all(|m| (0.0..=1.0).contains(&m.weight)));
    }

    #[test]
    fn bank_size_law() {
        for (n, m) in [(5, 4), (6, 0), (12, 3)] {
            let plan = NegativePlan::sample(n, 2, m, 1.0, MixupPool::Bank, &[], &mut rng(6)).unwrap();
            let mask = logit_mask(n, m);
            for p in 0..2 {
                for i in 0..n {
                    let bank = plan.bank(p, i, n).unwrap();
                    assert_eq!(bank.len(), 2 * (n - 1) + m);
                    assert!(!bank.intra.contains(&i) && !bank.inter.contains(&i));
                    let allowed = (0..2 * n + m).filter(|&c| mask.allowed(i, c)).count();
                    assert_eq!(allowed, bank.len() + 1);
                }
            }
        }
        assert_eq!(NegativeBank::assemble(0, 5, vec![]).unwrap().len(), 8);
    }

    fn single(tape: &mut Tape, rows: &[Vec<f64>]) -> Var {
        tape.constant(Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn uniform_similarities_give_log_bank_plus_one() {
        let mut tape = Tape::new();
        let head = ProjectionHead::identity(2).map(&mut |t| tape.constant(t.clone()));
        let a = single(&mut tape, &[vec![1.0, 2.0]]);
        let pos = single(&mut tape, &[vec![2.0, 4.0]]);
        let bank = single(&mut tape, &[vec![0.5, 1.0], vec![3.0, 6.0], vec![1.0, 2.0]]);
        let loss = info_nce(&mut tape, a, pos, bank, 0.5, &head).unwrap();
        assert!((tape.value(loss).item().unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_vanishes_with_sharp_alignment() {
        let mut tape = Tape::new();
        let head = ProjectionHead::identity(2).map(&mut |t| tape.constant(t.clone()));
        let a = single(&mut tape, &[vec![1.0, 0.01]]);
        let pos = single(&mut tape, &[vec![1.0, 0.01]]);
        let bank = single(&mut tape, &[vec![0.01, 1.0], vec![0.02, 1.0]]);
        let loss = info_nce(&mut tape, a, pos, bank, 0.01, &head).unwrap();
        let v = tape.value(loss).item().unwrap();
        assert!((0.0..1e-12).contains(&v), "{v}");
    }

    #[test]
    fn raising_a_negative_score_raises_the_loss() {
        let mut tape = Tape::new();
        let head = ProjectionHead::identity(2).map(&mut |t| tape.constant(t.clone()));
        let a = single(&mut tape, &[vec![1.0, 0.1]]);
        let pos = single(&mut tape, &[vec![1.0, 0.3]]);
        let bank_lo = single(&mut tape, &[vec![0.1, 1.0], vec![0.5, 1.0]]);
        let bank_hi = single(&mut tape, &[vec![0.1, 1.0], vec![1.0, 0.5]]);
        let lo = info_nce(&mut tape, a, pos, bank_lo, 0.5, &head).unwrap();
        let hi = info_nce(&mut tape, a, pos, bank_hi, 0.5, &head).unwrap();
        assert!(tape.value(hi).item().unwrap() > tape.value(lo).item().unwrap());
    }

    #[test]
    fn info_nce_matches_straight_line_evaluation() {
        let mut r = rng(7);
        let d = 3;
        let head_t = ProjectionHead::init(d, &mut r);
        let x = random(&mut r, 5, d);
        let mut tape = Tape::new();
        let head = head_t.map(&mut |t| tape.constant(t.clone()));
        let a = single(&mut tape, &[x.row(0).to_vec()]);
        let pos = single(&mut tape, &[x.row(1).to_vec()]);
        let bank = single(&mut tape, &[x.row(2).to_vec(), x.row(3).to_vec(), x.row(4).to_vec()]);
        let loss = info_nce(&mut tape, a, pos, bank, 0.7, &head).unwrap();

        let s: Vec<f64> = (1..5).map(|j| critic(&head_t, x.row(0), x.row(j)).unwrap() / 0.7).collect();
        let denom: f64 = s.iter().map(|v| v.exp()).sum();
        let expected = -(s[0].exp() / denom).ln();
        assert!((tape.value(loss).item().unwrap() - expected).abs() < 1e-10);

        let mut t2 = Tape::new();
        let h2 = head_t.map(&mut |t| t2.constant(t.clone()));
        let a2 = single(&mut t2, &[x.row(0).to_vec()]);
        let empty = t2.constant(Tensor::zeros(&[0, d]));
        assert!(info_nce(&mut t2, a2, a2, empty, 0.5, &h2).is_err());
        assert!(info_nce(&mut t2, a2, a2, a2, 0.0, &h2).is_err());
    }

    fn objective_value(views: &[Tensor], agg: &Tensor, head: &ProjectionHead<Tensor>, plan: &NegativePlan) -> f64 {
        let mut tape = Tape::new();
        let h = head.map(&mut |t| tape.constant(t.clone()));
        let out = EncoderOutput {
            views: views.iter().map(|v| tape.constant(v.clone())).collect(),
            aggregated: tape.constant(agg.clone()),
            beta: tape.constant(Tensor::zeros(&[1, views.len()])),
            attention: Vec::new(),
        };
        let loss = total_objective(&mut tape, &out, &h, plan, 0.5).unwrap();
        tape.value(loss).item().unwrap()
    }

    /// Per-anchor evaluation through `info_nce` with explicitly assembled banks.
    fn reference_objective(views: &[Tensor], agg: &Tensor, head: &ProjectionHead<Tensor>, plan: &NegativePlan) -> f64 {
        let n = agg.rows();
        let mut total = 0.0;
        for (p, hp) in views.iter().enumerate() {
            let mut source = hp.data().to_vec();
            source.extend_from_slice(agg.data());
            let source = Tensor::new(vec![2 * n, agg.cols()], source).unwrap();
            for i in 0..n {
                let bank = plan.bank(p, i, n).unwrap();
                let synth: Vec<Vec<f64>> = bank
                    .synthesized
                    .iter()
                    .map(|mx| {
                        let (a, b) = (source.row(mx.first.row(n)), source.row(mx.second.row(n)));
                        a.iter().zip(b).map(|(x, y)| mx.weight * x + (1.0 - mx.weight) * y).collect()
                    })
                    .collect();
                for (anchor_m, pos_m, own, other) in [(hp, agg, hp, agg), (agg, hp, agg, hp)] {
                    let mut rows: Vec<Vec<f64>> = bank.intra.iter().map(|&j| own.row(j).to_vec()).collect();
                    rows.extend(bank.inter.iter().map(|&j| other.row(j).to_vec()));
                    rows.extend(synth.iter().cloned());
                    let mut tape = Tape::new();
                    let h = head.map(&mut |t| tape.constant(t.clone()));
                    let a = single(&mut tape, &[anchor_m.row(i).to_vec()]);
                    let pos = single(&mut tape, &[pos_m.row(i).to_vec()]);
                    let b = single(&mut tape, &rows);
                    let l = info_nce(&mut tape, a, pos, b, 0.5, &h).unwrap();
                    total += 0.5 * tape.value(l).item().unwrap();
                }
            }
        }
        total / (n * views.len()) as f64
    }

    #[test]
    fn batched_objective_matches_per_anchor_reference() {
        let mut r = rng(8);
        let (n, d) = (6, 4);
        let views = vec![random(&mut r, n, d), random(&mut r, n, d)];
        let agg = random(&mut r, n, d);
        let head = ProjectionHead::init(d, &mut r);
        for pool in [MixupPool::Bank, MixupPool::Candidates] {
            let cands: Vec<CandidateIndex> = (0..2)
                .map(|p| CandidateIndex::from_scores(n, 3, |a| (0..n).map(|j| ((j * 7 + a * 3 + p) % 5) as f64).collect()).unwrap())
                .collect();
            let plan = NegativePlan::sample(n, 2, 3, 1.0, pool, &cands, &mut rng(9)).unwrap();
            let got = objective_value(&views, &agg, &head, &plan);
            let want = reference_objective(&views, &agg, &head, &plan);
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
        let empty = NegativePlan::empty(2);
        let got = objective_value(&views, &agg, &head, &empty);
        assert!((got - reference_objective(&views, &agg, &head, &empty)).abs() < 1e-10);
    }

    #[test]
    fn two_node_single_view_by_hand() {
        // identity head on positive inputs: similarities are plain cosines
        let hp = Tensor::from_rows(&[vec![1.0, 0.2], vec![0.3, 1.0]]).unwrap();
        let h = Tensor::from_rows(&[vec![0.8, 0.5], vec![0.4, 0.9]]).unwrap();
        let head = ProjectionHead::identity(2);
        let got = objective_value(std::slice::from_ref(&hp), &h, &head, &NegativePlan::empty(1));

        let cos = |a: &[f64], b: &[f64]| {
            let dot = a[0] * b[0] + a[1] * b[1];
            dot / ((a[0] * a[0] + a[1] * a[1]).sqrt() * (b[0] * b[0] + b[1] * b[1]).sqrt())
        };
        let term = |anchor: &[f64], pos: &[f64], negs: [&[f64]; 2]| {
            let s = |v: &[f64]| (cos(anchor, v) / 0.5).exp();
            -(s(pos) / (s(pos) + s(negs[0]) + s(negs[1]))).ln()
        };
        let (p0, p1, a0, a1) = (hp.row(0), hp.row(1), h.row(0), h.row(1));
        let want = 0.5
            * (0.5 * (term(p0, a0, [p1, a1]) + term(a0, p0, [a1, p1]))
                + 0.5 * (term(p1, a1, [p0, a0]) + term(a1, p1, [a0, p0])));
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn variant_round_trips_through_strings() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("bogus".parse::<Variant>().is_err());
        assert_eq!(serde_json::to_string(&Variant::Pe).unwrap(), "\"pe\"");
    }

    #[test]
    fn default_negative_count() {
        let cfg = ContrastConfig::default();
        assert_eq!(cfg.negatives(150), 37);
        assert_eq!(cfg.negatives(5000), 256);
        let none = ContrastConfig {
            variant: Variant::None,
            m: Some(10),
            ..cfg
        };
        assert_eq!(none.negatives(150), 0);
    }
}
