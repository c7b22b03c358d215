use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Neighbors consulted by the classifier.
    pub k: usize,
    /// Fraction of each class used as the labeled training set.
    pub train_frac: f64,
    /// Number of random splits.
    pub repeats: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 5,
            train_frac: 0.2,
            repeats: 10,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.repeats == 0 {
            return Err(Error::invalid("k and repeats must be positive"));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::invalid(format!("train_frac must be in (0, 1), got {}", self.train_frac)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub split: usize,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub splits: Vec<SplitScore>,
    pub micro_mean: f64,
    pub micro_std: f64,
    pub macro_mean: f64,
    pub macro_std: f64,
    #[serde(default)]
    pub losses: Vec<f64>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Stratified split: each class contributes `max(1, round(frac * size))`
/// nodes to the training set. Both halves come back sorted.
pub fn stratified_split(labels: &[usize], train_frac: f64, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(rng);
        let take = ((train_frac * members.len() as f64).round() as usize).max(1);
        train.extend_from_slice(&members[..take]);
        test.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Majority vote among the `k` nearest training rows (Euclidean).
/// Distance ties go to the lower training index, vote ties to the smaller label.
pub fn knn_predict(x: &Tensor, labels: &[usize], train: &[usize], test: &[usize], k: usize) -> Vec<usize> {
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    test.iter()
        .map(|&t| {
            let mut dists: Vec<(f64, usize)> = train.iter().map(|&j| (squared_distance(x.row(t), x.row(j)), j)).collect();
            dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut votes = vec![0usize; n_classes];
            for &(_, j) in dists.iter().take(k) {
                votes[labels[j]] += 1;
            }
            // max_by_key keeps the last maximum, so scan in reverse
            (0..n_classes).rev().max_by_key(|&c| votes[c]).unwrap_or(0)
        })
        .collect()
}

/// Micro-F1 (accuracy for single-label data) and Macro-F1 (mean per-class
/// F1 over every class seen in `truth` or `predicted`).
pub fn f1_scores(truth: &[usize], predicted: &[usize]) -> (f64, f64) {
    assert_eq!(truth.len(), predicted.len());
    if truth.is_empty() {
        return (0.0, 0.0);
    }
    let correct = truth.iter().zip(predicted).filter(|(a, b)| a == b).count();
    let micro = correct as f64 / truth.len() as f64;
    let classes: BTreeSet<usize> = truth.iter().chain(predicted).copied().collect();
    let macro_sum: f64 = classes
        .iter()
        .map(|&c| {
            let tp = truth.iter().zip(predicted).filter(|&(&t, &p)| t == c && p == c).count() as f64;
            let fp = truth.iter().zip(predicted).filter(|&(&t, &p)| t != c && p == c).count() as f64;
            let fn_ = truth.iter().zip(predicted).filter(|&(&t, &p)| t == c && p != c).count() as f64;
            if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fn_)
            }
        })
        .sum();
    (micro, macro_sum / classes.len() as f64)
}

/// kNN classification over `cfg.repeats` stratified splits drawn from `rng`.
/// Reads `embeddings` only.
pub fn knn_eval(embeddings: &Tensor, labels: &[usize], cfg: &EvalConfig, rng: &mut impl Rng) -> Result<EvalReport> {
    cfg.validate()?;
    if embeddings.rows() != labels.len() {
        return Err(Error::shape(
            "knn_eval",
            format!("{} embeddings for {} labels", embeddings.rows(), labels.len()),
        ));
    }
    let mut splits = Vec::with_capacity(cfg.repeats);
    for split in 0..cfg.repeats {
        let (train, test) = stratified_split(labels, cfg.train_frac, rng);
        if test.is_empty() {
            return Err(Error::invalid("split left no test nodes"));
        }
        let predicted = knn_predict(embeddings, labels, &train, &test, cfg.k);
        let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        let (micro_f1, macro_f1) = f1_scores(&truth, &predicted);
        splits.push(SplitScore {
            split,
            micro_f1,
            macro_f1,
        });
    }
    let (micro_mean, micro_std) = mean_std(splits.iter().map(|s| s.micro_f1));
    let (macro_mean, macro_std) = mean_std(splits.iter().map(|s| s.macro_f1));
    Ok(EvalReport {
        splits,
        micro_mean,
        micro_std,
        macro_mean,
        macro_std,
        losses: Vec::new(),
    })
}

pub const METRICS_HEADER: &str = "variant,seed,split,micro_f1,macro_f1,final_loss,epochs_run";

/// One CSV row per split. `rows` holds `(variant, seed, report, final_loss, epochs_run)`.
pub fn metrics_csv<'a>(rows: impl IntoIterator<Item = (&'a str, u64, &'a EvalReport, f64, usize)>) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for (variant, seed, report, loss, epochs) in rows {
        for s in &report.splits {
            let _ = writeln!(
                out,
                "{variant},{seed},{},{},{},{loss},{epochs}",
                s.split, s.micro_f1, s.macro_f1
            );
        }
    }
    out
}
