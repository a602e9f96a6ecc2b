//! Agreement between score rankings (Spearman, top-decile overlap) and
//! between model predictions (churn), plus the paired-training protocol that
//! produces them.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::diffcore::{MaskSelector, ModelSpec};
use crate::error::{Error, Result};
use crate::influence::{score_dataset, ScoreMethod, ScoreTable};
use crate::ranking::{rank, top_count};
use crate::tasks::Dataset;
use crate::trainer::{self, Sampler, TrainConfig};

fn check_same_ids(a: &ScoreTable, b: &ScoreTable) -> Result<()> {
    if a.len() != b.len() || a.entries().keys().ne(b.entries().keys()) {
        return Err(Error::arg("score tables cover different ids"));
    }
    Ok(())
}

/// 1-based ranks of `xs` in ascending order, ties sharing their mean rank.
pub fn mid_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        let mid = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mid;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation over the shared ids.
pub fn spearman(a: &ScoreTable, b: &ScoreTable) -> Result<f64> {
    check_same_ids(a, b)?;
    if a.len() < 2 {
        return Err(Error::UndefinedCorrelation(
            "need at least two ids".to_string(),
        ));
    }
    let xa: Vec<f64> = a.entries().values().copied().collect();
    let xb: Vec<f64> = b.entries().values().copied().collect();
    pearson(&mid_ranks(&xa), &mid_ranks(&xb))
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant ranking".to_string()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Percentage overlap of the `(100 − percentile)%` highest-scored ids.
pub fn overlap_at_percentile(a: &ScoreTable, b: &ScoreTable, percentile: f64) -> Result<f64> {
    check_same_ids(a, b)?;
    if !(0.0..100.0).contains(&percentile) {
        return Err(Error::arg(format!(
            "percentile {percentile} outside [0, 100)"
        )));
    }
    let k = top_count(a.len(), 100.0 - percentile);
    if k == 0 {
        return Err(Error::arg("score tables are empty"));
    }
    let ra = rank(a);
    let rb = rank(b);
    let top_a: BTreeSet<u64> = ra.top(k).iter().copied().collect();
    let shared = rb.top(k).iter().filter(|id| top_a.contains(id)).count();
    Ok(100.0 * shared as f64 / k as f64)
}

/// Percentage of examples on which exactly one of the two models is right.
pub fn churn(preds_a: &[usize], preds_b: &[usize], gold: &[usize]) -> Result<f64> {
    if preds_a.len() != gold.len() || preds_b.len() != gold.len() {
        return Err(Error::shape(format!(
            "prediction lengths {} and {} differ from {} gold labels",
            preds_a.len(),
            preds_b.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::arg("churn over zero examples is undefined"));
    }
    let disagreements = preds_a
        .iter()
        .zip(preds_b)
        .zip(gold)
        .filter(|((&a, &b), &y)| (a == y) != (b == y))
        .count();
    Ok(100.0 * disagreements as f64 / gold.len() as f64)
}

/// What changes between the baseline and the varied run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Variation {
    pub batch_size: Option<usize>,
    pub data_order_seed: Option<u64>,
    pub init_seed: Option<u64>,
    /// Multiplies every hidden width.
    pub width_factor: Option<usize>,
    /// Replaces the number of hidden layers (each new layer repeats the last width).
    pub depth: Option<usize>,
}

impl Variation {
    pub fn apply(&self, spec: &ModelSpec, cfg: &TrainConfig) -> Result<(ModelSpec, TrainConfig)> {
        let mut spec = spec.clone();
        let mut cfg = cfg.clone();
        if let Some(f) = self.width_factor {
            if f == 0 {
                return Err(Error::arg("width factor must be positive"));
            }
            spec.hidden_widths.iter_mut().for_each(|w| *w *= f);
        }
        if let Some(d) = self.depth {
            if d == 0 {
                return Err(Error::arg("depth must be positive"));
            }
            let last = *spec.hidden_widths.last().expect("validated spec");
            spec.hidden_widths.resize(d, last);
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(s) = self.data_order_seed {
            cfg.order_seed = s;
        }
        if let Some(s) = self.init_seed {
            cfg.init_seed = s;
        }
        spec.validate()?;
        Ok((spec, cfg))
    }
}

/// Everything held fixed across the two runs of a stability experiment.
#[derive(Debug, Clone)]
pub struct StabilitySetup<'a> {
    pub spec: ModelSpec,
    pub train: &'a Dataset,
    pub dev: &'a Dataset,
    pub test: &'a Dataset,
    pub train_cfg: TrainConfig,
    pub method: ScoreMethod,
    pub mask: MaskSelector,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunDescriptor {
    pub spec: ModelSpec,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub spearman: f64,
    pub overlap90: f64,
    pub churn: f64,
    pub n: usize,
    pub config_a: RunDescriptor,
    pub config_b: RunDescriptor,
}

struct RunResult {
    scores: ScoreTable,
    test_preds: Vec<usize>,
}

fn run_and_score(
    setup: &StabilitySetup<'_>,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<RunResult> {
    let out = trainer::train(spec, setup.train, setup.dev, cfg, &Sampler::Uniform)?;
    let mut saved: Vec<_> = out
        .checkpoints
        .iter()
        .filter(|c| c.step < cfg.steps)
        .map(|c| c.params.clone())
        .collect();
    saved.push(out.params.clone());
    let scores = score_dataset(&setup.method, spec, &saved, setup.train, setup.mask)?;
    let test_preds = crate::diffcore::predict(spec, &out.params, &setup.test.to_batch()?)?;
    Ok(RunResult { scores, test_preds })
}

/// Trains the baseline and the varied configuration (concurrently), scores
/// the training set under both, and compares rankings and test predictions.
pub fn stability_experiment(
    setup: &StabilitySetup<'_>,
    variation: &Variation,
) -> Result<StabilityReport> {
    let (spec_b, cfg_b) = variation.apply(&setup.spec, &setup.train_cfg)?;
    let (a, b) = rayon::join(
        || run_and_score(setup, &setup.spec, &setup.train_cfg),
        || run_and_score(setup, &spec_b, &cfg_b),
    );
    let (a, b) = (a?, b?);
    Ok(StabilityReport {
        spearman: spearman(&a.scores, &b.scores)?,
        overlap90: overlap_at_percentile(&a.scores, &b.scores, 90.0)?,
        churn: churn(&a.test_preds, &b.test_preds, &setup.test.labels())?,
        n: a.scores.len(),
        config_a: RunDescriptor {
            spec: setup.spec.clone(),
            train: setup.train_cfg.clone(),
        },
        config_b: RunDescriptor {
            spec: spec_b,
            train: cfg_b,
        },
    })
}
