//! Deterministic mini-batch training: uniform sampling, filtered data, or
//! bucket sampling scheduled by a bandit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autocl::{
    cosine_reward, pgnorm_reward, BanditState, PolicyLog, PolicyRow, RewardKind, RewardScaler,
    Variant, DEFAULT_ETA, DEFAULT_GAMMA,
};
use crate::diffcore::{self, argmax, init_params, ModelSpec, ParamVector};
use crate::error::{Error, Result};
use crate::ranking::BucketAssignment;
use crate::tasks::Dataset;

/// Losses above this are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    SgdMomentum {
        momentum: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub checkpoint_steps: Vec<usize>,
    pub init_seed: u64,
    /// Drives which examples land in each batch; independent of `init_seed`.
    pub order_seed: u64,
    /// Dev evaluation interval for the metric trace; 0 records only the final step.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 32,
            learning_rate: 0.1,
            optimizer: Optimizer::Sgd,
            checkpoint_steps: Vec::new(),
            init_seed: 0,
            order_seed: 0,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, train_size: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be positive"));
        }
        if self.batch_size > train_size {
            return Err(Error::arg(format!(
                "batch_size {} exceeds training set size {train_size}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg("learning_rate must be positive"));
        }
        if let Some(&s) = self
            .checkpoint_steps
            .iter()
            .find(|&&s| s == 0 || s > self.steps)
        {
            return Err(Error::arg(format!(
                "checkpoint step {s} outside [1, {}]",
                self.steps
            )));
        }
        Ok(())
    }

    /// `n` checkpoint steps evenly spaced over the run, ending at `steps`.
    pub fn with_even_checkpoints(mut self, n: usize) -> Self {
        self.checkpoint_steps = (1..=n).map(|i| (i * self.steps / n).max(1)).collect();
        self.checkpoint_steps.dedup();
        self
    }
}

/// Bandit settings for bucket-scheduled training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoclConfig {
    pub variant: Variant,
    pub gamma: f64,
    pub eta: f64,
    pub alpha: f64,
    pub reward: RewardKind,
    pub window: usize,
    pub lo_q: f64,
    pub hi_q: f64,
    pub bandit_seed: u64,
    /// Size of the dev batch the cosine reward compares against.
    pub reward_batch_size: usize,
}

impl Default for AutoclConfig {
    fn default() -> Self {
        AutoclConfig {
            variant: Variant::Exp3s,
            gamma: DEFAULT_GAMMA,
            eta: DEFAULT_ETA,
            alpha: 1e-3,
            reward: RewardKind::Pgnorm,
            window: 1000,
            lo_q: 0.10,
            hi_q: 0.90,
            bandit_seed: 0,
            reward_batch_size: 64,
        }
    }
}

pub enum Sampler<'a> {
    Uniform,
    Buckets {
        assignment: &'a BucketAssignment,
        autocl: &'a AutoclConfig,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetrics {
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub params: ParamVector,
    pub metrics: CheckpointMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ParamVector,
    pub checkpoints: Vec<Checkpoint>,
    pub trace: Vec<TraceRow>,
    pub policy_log: Option<PolicyLog>,
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        let (first, second) = match kind {
            Optimizer::Sgd => (Vec::new(), Vec::new()),
            Optimizer::SgdMomentum { .. } => (vec![0.0; n], Vec::new()),
            Optimizer::Adam { .. } => (vec![0.0; n], vec![0.0; n]),
        };
        OptimizerState {
            kind,
            lr,
            first,
            second,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            Optimizer::SgdMomentum { momentum } => {
                for ((p, g), v) in params.iter_mut().zip(grad).zip(&mut self.first) {
                    *v = momentum * *v + g;
                    *p -= self.lr * *v;
                }
            }
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                }
            }
        }
    }
}

fn check_finite(step: usize, loss: f64) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
        return Err(Error::Diverged { step, loss });
    }
    Ok(())
}

fn draw_batch(pool: &[usize], size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..size)
        .map(|_| pool[rng.random_range(0..pool.len())])
        .collect()
}

struct Scheduler {
    pools: Vec<Vec<usize>>,
    bandit: BanditState,
    scaler: RewardScaler,
    reward: RewardKind,
    bandit_rng: ChaCha8Rng,
    reward_rng: ChaCha8Rng,
    reward_batch_size: usize,
    log: PolicyLog,
}

impl Scheduler {
    fn new(train: &Dataset, assignment: &BucketAssignment, cfg: &AutoclConfig) -> Result<Self> {
        let mut pools = vec![Vec::new(); assignment.k()];
        for (pos, ex) in train.examples().iter().enumerate() {
            let b = assignment
                .bucket_of(ex.id)
                .ok_or_else(|| Error::arg(format!("training example {} has no bucket", ex.id)))?;
            pools[b].push(pos);
        }
        if let Some(b) = pools.iter().position(Vec::is_empty) {
            return Err(Error::arg(format!("bucket {b} has no training examples")));
        }
        if cfg.reward_batch_size == 0 {
            return Err(Error::arg("reward_batch_size must be positive"));
        }
        Ok(Scheduler {
            pools,
            bandit: BanditState::new(assignment.k(), cfg.gamma, cfg.eta, cfg.variant, cfg.alpha)?,
            scaler: RewardScaler::new(cfg.window, cfg.lo_q, cfg.hi_q)?,
            reward: cfg.reward,
            bandit_rng: ChaCha8Rng::seed_from_u64(cfg.bandit_seed),
            reward_rng: ChaCha8Rng::seed_from_u64(cfg.bandit_seed.wrapping_add(0x5eed)),
            reward_batch_size: cfg.reward_batch_size,
            log: PolicyLog::default(),
        })
    }
}

/// Trains from `init_params(spec, cfg.init_seed)`.
///
/// Each step draws `batch_size` examples with replacement from the allowed
/// pool: the whole training set, or under [`Sampler::Buckets`] the bucket the
/// bandit picks. In bucket mode the bandit then receives the scaled reward.
pub fn train(
    spec: &ModelSpec,
    train: &Dataset,
    dev: &Dataset,
    cfg: &TrainConfig,
    sampler: &Sampler<'_>,
) -> Result<TrainOutput> {
    if train.is_empty() || dev.is_empty() {
        return Err(Error::arg("training and dev splits must be nonempty"));
    }
    cfg.validate(train.len())?;
    let mut params = init_params(spec, cfg.init_seed)?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, params.len());
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.order_seed);
    let all: Vec<usize> = (0..train.len()).collect();
    let mut scheduler = match sampler {
        Sampler::Uniform => None,
        Sampler::Buckets { assignment, autocl } => Some(Scheduler::new(train, assignment, autocl)?),
    };
    let dev_batch = dev.to_batch()?;

    let mut checkpoints = Vec::new();
    let mut trace = Vec::new();

    for step in 1..=cfg.steps {
        let (arm, policy) = match &mut scheduler {
            None => (None, None),
            Some(s) => {
                let policy = s.bandit.policy();
                let arm = s.bandit.sample_arm(&mut s.bandit_rng);
                (Some(arm), Some(policy))
            }
        };
        let pool = match (arm, &scheduler) {
            (Some(a), Some(s)) => &s.pools[a],
            _ => &all,
        };
        let batch = train.batch_of(&draw_batch(pool, cfg.batch_size, &mut order_rng))?;
        let (loss, g) = diffcore::loss_and_grad(spec, &params, &batch)?;
        check_finite(step, loss)?;

        let cosine = match &mut scheduler {
            Some(s) if s.reward == RewardKind::Cosine => {
                let take = s.reward_batch_size.min(dev.len());
                let positions: Vec<usize> = (0..take)
                    .map(|_| s.reward_rng.random_range(0..dev.len()))
                    .collect();
                let (_, dev_grad) =
                    diffcore::loss_and_grad(spec, &params, &dev.batch_of(&positions)?)?;
                Some(cosine_reward(&g, &dev_grad))
            }
            _ => None,
        };

        opt.step(params.values_mut(), &g);

        if let (Some(s), Some(arm), Some(policy)) = (&mut scheduler, arm, policy) {
            let raw = match cosine {
                Some(c) => c,
                None => {
                    let (after, _) = diffcore::forward_loss(spec, &params, &batch)?;
                    check_finite(step, after)?;
                    // a batch the model already fits perfectly offers no gain
                    if loss > 0.0 {
                        pgnorm_reward(loss, after)?
                    } else {
                        0.0
                    }
                }
            };
            let scaled = s.scaler.scale(raw);
            s.bandit.update(arm, scaled)?;
            s.log.push(PolicyRow {
                step: step as u64,
                arm,
                policy,
                reward_raw: raw,
                reward_scaled: scaled,
            });
        }

        if cfg.checkpoint_steps.contains(&step) {
            checkpoints.push(Checkpoint {
                step,
                params: params.clone(),
                metrics: CheckpointMetrics { train_loss: loss },
            });
        }
        let eval_now = step == cfg.steps || (cfg.eval_every > 0 && step % cfg.eval_every == 0);
        if eval_now {
            let (dev_loss, logits) = diffcore::forward_loss(spec, &params, &dev_batch)?;
            let correct = logits
                .iter()
                .zip(dev_batch.labels())
                .filter(|(l, &y)| argmax(l) == y)
                .count();
            trace.push(TraceRow {
                step,
                train_loss: loss,
                dev_loss,
                dev_acc: correct as f64 / dev.len() as f64,
            });
        }
    }

    Ok(TrainOutput {
        params,
        checkpoints,
        trace,
        policy_log: scheduler.map(|s| s.log),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub loss: f64,
}

/// Accuracy, per-class and macro F1 (0/0 counts as 0), and mean loss.
pub fn evaluate(spec: &ModelSpec, params: &ParamVector, ds: &Dataset) -> Result<EvalResult> {
    if ds.is_empty() {
        return Err(Error::arg("cannot evaluate on an empty dataset"));
    }
    let batch = ds.to_batch()?;
    let (loss, logits) = diffcore::forward_loss(spec, params, &batch)?;
    let preds: Vec<usize> = logits.iter().map(|l| argmax(l)).collect();
    let (accuracy, per_class_f1) = classification_scores(&preds, batch.labels(), ds.num_classes());
    let macro_f1 = per_class_f1.iter().sum::<f64>() / per_class_f1.len() as f64;
    Ok(EvalResult {
        accuracy,
        macro_f1,
        per_class_f1,
        loss,
    })
}

/// Accuracy and per-class F1 from predictions and gold labels.
pub fn classification_scores(
    preds: &[usize],
    gold: &[usize],
    num_classes: usize,
) -> (f64, Vec<f64>) {
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fneg = vec![0usize; num_classes];
    for (&p, &y) in preds.iter().zip(gold) {
        if p == y {
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fneg[y] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let f1 = (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fneg[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect();
    (correct as f64 / gold.len().max(1) as f64, f1)
}

/// Trains only on bucket `bucket` and evaluates on `held_out`.
pub fn train_on_bucket(
    spec: &ModelSpec,
    train_ds: &Dataset,
    held_out: &Dataset,
    assignment: &BucketAssignment,
    bucket: usize,
    cfg: &TrainConfig,
) -> Result<EvalResult> {
    if bucket >= assignment.k() {
        return Err(Error::arg(format!("bucket {bucket} out of range")));
    }
    let members = assignment.members(bucket);
    let subset = train_ds.subset(&members);
    if subset.is_empty() {
        return Err(Error::arg(format!("bucket {bucket} is empty")));
    }
    let out = train(spec, &subset, held_out, cfg, &Sampler::Uniform)?;
    evaluate(spec, &out.params, held_out)
}

/// Portable checkpoint file: `{spec, step, layout, values}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub spec: ModelSpec,
    pub step: usize,
    pub layout: Vec<diffcore::LayerSlot>,
    pub values: Vec<f64>,
}

pub fn save_checkpoint(
    spec: &ModelSpec,
    step: usize,
    params: &ParamVector,
    path: &Path,
) -> Result<()> {
    let file = CheckpointFile {
        spec: spec.clone(),
        step,
        layout: params.layout().to_vec(),
        values: params.values().to_vec(),
    };
    let text = serde_json::to_string(&file)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelSpec, usize, ParamVector)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    file.spec.validate()?;
    if file.layout != file.spec.layout() {
        return Err(Error::shape(format!(
            "{}: checkpoint layout does not match its spec",
            path.display()
        )));
    }
    let params = ParamVector::new(file.values, file.layout)?;
    Ok((file.spec, file.step, params))
}

/// Metric trace CSV `step,train_loss,dev_loss,dev_acc`.
pub fn write_trace_csv(trace: &[TraceRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "step,train_loss,dev_loss,dev_acc").map_err(io)?;
    for r in trace {
        writeln!(
            w,
            "{},{:e},{:e},{:e}",
            r.step, r.train_loss, r.dev_loss, r.dev_acc
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Bucket-visit counts from a policy log, indexed by arm.
pub fn arm_counts(log: &PolicyLog, k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    for r in &log.rows {
        if r.arm < k {
            counts[r.arm] += 1;
        }
    }
    counts
}

/// Maps each id to its prediction, for churn over a shared test split.
pub fn predictions(
    spec: &ModelSpec,
    params: &ParamVector,
    ds: &Dataset,
) -> Result<BTreeMap<u64, usize>> {
    let preds = diffcore::predict(spec, params, &ds.to_batch()?)?;
    Ok(ds.ids().into_iter().zip(preds).collect())
}
