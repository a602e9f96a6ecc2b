//! End-to-end experiments: generate splits, train a scorer, score and rank
//! the training set, then retrain under each regime (full data, percentile
//! filters, bandit-scheduled buckets, single buckets) and compare.
//!
//! Everything an experiment produces lands in one run directory, and a
//! `COMPLETE` marker written last guards it against accidental overwrites.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autocl::PolicyLog;
use crate::diffcore::{Activation, MaskSelector, ModelSpec};
use crate::error::{Error, Result};
use crate::hashing::config_hash;
use crate::influence::{
    score_dataset, write_scores_csv, AbifConfig, MethodKind, ScoreMethod, ScoreTable, TracinConfig,
    DEFAULT_ARNOLDI_ITERS, DEFAULT_HVP_EXAMPLES, DEFAULT_TOP_K, DEFAULT_TRACIN_CHECKPOINTS,
    DEFAULT_TRACIN_PROJECTION,
};
use crate::ranking::{
    bucket_histogram, percentile_split, quantile_buckets, rank, write_buckets_csv,
    BucketAssignment, FilterManifest, Ranking,
};
use crate::tasks::{
    gen_bow_text, gen_gaussian_clusters, inject_label_noise, load_jsonl_with, save_jsonl, Dataset,
    NoiseReport, Split,
};
use crate::trainer::{
    self, arm_counts, evaluate, save_checkpoint, train_on_bucket, write_trace_csv, AutoclConfig,
    EvalResult, Sampler, TrainConfig,
};

/// Environment variable that overrides [`DEFAULT_RUNS_DIR`].
pub const RUNS_DIR_ENV: &str = "INFLUXCL_RUNS_DIR";
pub const DEFAULT_RUNS_DIR: &str = "runs";
/// Written last; its presence marks a run directory as finished.
pub const COMPLETE_MARKER: &str = "COMPLETE";

/// Root under which run directories are created.
pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map_or_else(|| PathBuf::from(DEFAULT_RUNS_DIR), PathBuf::from)
}

/// Creates `dir` for a new run.
///
/// A directory holding a `COMPLETE` marker is only replaced when `force` is
/// set; an unfinished one is reused and its files overwritten.
pub fn prepare_run_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.join(COMPLETE_MARKER).exists() {
        if !force {
            return Err(Error::RunExists(dir.to_path_buf()));
        }
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Marks `dir` complete, recording the hash of the configuration that made it.
pub fn mark_complete(dir: &Path, hash: &str) -> Result<()> {
    let path = dir.join(COMPLETE_MARKER);
    std::fs::write(&path, format!("{hash}\n")).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Which synthetic generator produces the splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    Clusters {
        classes: usize,
        dim: usize,
        separation: f64,
    },
    Bow {
        classes: usize,
        vocab_size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub generator: Generator,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Fraction of training labels flipped; dev and test stay clean.
    pub noise: f64,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            generator: Generator::Clusters {
                classes: 10,
                dim: 10,
                separation: 4.0,
            },
            n_train: 2000,
            n_dev: 500,
            n_test: 2000,
            noise: 0.0,
            seed: 0,
        }
    }
}

/// Seed offsets of the derived per-split streams.
const TEST_SEED_OFFSET: u64 = 100;
const NOISE_SEED_OFFSET: u64 = 200;
const DEV_SEED_OFFSET: u64 = 300;

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    pub noise: NoiseReport,
}

impl TaskConfig {
    fn generate(&self, n: usize, seed: u64) -> Result<Dataset> {
        match self.generator {
            Generator::Clusters {
                classes,
                dim,
                separation,
            } => gen_gaussian_clusters(n, classes, dim, separation, seed),
            Generator::Bow {
                classes,
                vocab_size,
            } => gen_bow_text(n, vocab_size, classes, seed),
        }
    }

    /// Generates train/dev/test from independent streams derived from
    /// `seed`, then flips `noise` of the training labels.
    pub fn splits(&self) -> Result<Splits> {
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::arg(format!(
                "noise fraction {} outside [0, 1)",
                self.noise
            )));
        }
        let s = self.seed;
        let clean = self.generate(self.n_train, s)?;
        let dev = self
            .generate(self.n_dev, s.wrapping_add(DEV_SEED_OFFSET))?
            .with_split(Split::Dev);
        let test = self
            .generate(self.n_test, s.wrapping_add(TEST_SEED_OFFSET))?
            .with_split(Split::Test);
        let (train, noise) = if self.noise > 0.0 {
            inject_label_noise(&clean, self.noise, s.wrapping_add(NOISE_SEED_OFFSET))?
        } else {
            let report = NoiseReport::from_flags(&clean);
            (clean, report)
        };
        Ok(Splits {
            train,
            dev,
            test,
            noise,
        })
    }
}

impl Splits {
    pub fn save(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        save_jsonl(&self.train, &dir.join("train.jsonl"))?;
        save_jsonl(&self.dev, &dir.join("dev.jsonl"))?;
        save_jsonl(&self.test, &dir.join("test.jsonl"))
    }

    /// Loads `train.jsonl`, `dev.jsonl` and `test.jsonl` from `dir`; the
    /// noise report is recovered from the `noisy` flags.
    pub fn load(dir: &Path) -> Result<Splits> {
        let file = |name: &str| -> Result<PathBuf> {
            let p = dir.join(name);
            if p.is_file() {
                Ok(p)
            } else {
                Err(Error::MissingInput(format!("{} not found", p.display())))
            }
        };
        let train = load_jsonl_with(&file("train.jsonl")?, Split::Train, None)?;
        let c = Some(train.num_classes());
        let dev = load_jsonl_with(&file("dev.jsonl")?, Split::Dev, c)?;
        let test = load_jsonl_with(&file("test.jsonl")?, Split::Test, c)?;
        if dev.dim() != train.dim() || test.dim() != train.dim() {
            return Err(Error::shape("splits have different feature dimensions"));
        }
        let noise = NoiseReport::from_flags(&train);
        Ok(Splits {
            train,
            dev,
            test,
            noise,
        })
    }
}

/// Hidden architecture; input and output sizes come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_widths: vec![16],
            activation: Activation::Tanh,
        }
    }
}

impl ModelConfig {
    pub fn spec_for(&self, ds: &Dataset) -> Result<ModelSpec> {
        ModelSpec::new(
            ds.dim(),
            self.hidden_widths.clone(),
            ds.num_classes(),
            self.activation,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InfluenceConfig {
    pub method: MethodKind,
    pub mask: MaskSelector,
    /// Eigenvectors kept (ABIF).
    pub top_k: usize,
    /// Arnoldi iterations (ABIF).
    pub iterations: usize,
    /// Examples averaged into each Hessian-vector product (ABIF).
    pub hvp_examples: usize,
    /// Random projection size (TracIn); `None` keeps full gradients.
    pub projection_dim: Option<usize>,
    /// Checkpoints saved by the scorer run and averaged by TracIn.
    pub checkpoints: usize,
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        InfluenceConfig {
            method: MethodKind::Abif,
            mask: MaskSelector::Last,
            top_k: DEFAULT_TOP_K,
            iterations: DEFAULT_ARNOLDI_ITERS,
            hvp_examples: DEFAULT_HVP_EXAMPLES,
            projection_dim: Some(DEFAULT_TRACIN_PROJECTION),
            checkpoints: DEFAULT_TRACIN_CHECKPOINTS,
        }
    }
}

impl InfluenceConfig {
    pub fn method(&self, score_seed: u64) -> ScoreMethod {
        match self.method {
            MethodKind::Abif => ScoreMethod::Abif(AbifConfig {
                top_k: self.top_k,
                n_iters: self.iterations,
                hvp_examples: self.hvp_examples,
                seed: score_seed,
            }),
            MethodKind::Tracin => ScoreMethod::Tracin(TracinConfig {
                checkpoints: self.checkpoints,
                projection_dim: self.projection_dim,
                seed: score_seed,
            }),
        }
    }
}

/// The three named seeds: model initialization, data order, and the
/// randomness inside scoring (Arnoldi start vector, projections).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub init: u64,
    pub order: u64,
    pub score: u64,
}

/// One way of training the final model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum Regime {
    /// Uniform sampling from the whole training set.
    Baseline,
    /// Drop the top `pct`% by self-influence, then train uniformly.
    Filter { pct: f64 },
    /// Bandit-scheduled sampling over `buckets` influence quantiles.
    Autocl {
        buckets: usize,
        #[serde(default)]
        bandit: AutoclConfig,
    },
    /// Train on each influence quantile alone.
    BucketSweep { buckets: usize },
}

impl Regime {
    /// Directory-safe name, unique within a sensible manifest.
    pub fn name(&self) -> String {
        match self {
            Regime::Baseline => "baseline".to_string(),
            Regime::Filter { pct } => format!("filter_{pct}"),
            Regime::Autocl { buckets, bandit } => {
                format!("autocl_k{buckets}_{}_{}", bandit.variant, bandit.reward)
            }
            Regime::BucketSweep { buckets } => format!("bucket_sweep_k{buckets}"),
        }
    }

    pub fn needs_scores(&self) -> bool {
        !matches!(self, Regime::Baseline)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunManifest {
    pub task: TaskConfig,
    pub model: ModelConfig,
    /// Its seed fields are overridden by `seeds`.
    pub train: TrainConfig,
    pub influence: InfluenceConfig,
    pub regimes: Vec<Regime>,
    pub seeds: Seeds,
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest {
            task: TaskConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            influence: InfluenceConfig::default(),
            regimes: vec![Regime::Baseline],
            seeds: Seeds::default(),
        }
    }
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest> {
        if !path.is_file() {
            return Err(Error::MissingInput(format!("{} not found", path.display())));
        }
        read_json(path)
    }

    /// Training configuration with the named seeds applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            init_seed: self.seeds.init,
            order_seed: self.seeds.order,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() {
            return Err(Error::arg("manifest lists no regimes"));
        }
        let names: BTreeSet<String> = self.regimes.iter().map(Regime::name).collect();
        if names.len() != self.regimes.len() {
            return Err(Error::arg("manifest lists the same regime twice"));
        }
        if self.influence.checkpoints == 0 {
            return Err(Error::arg("influence.checkpoints must be positive"));
        }
        if !(0.0..1.0).contains(&self.task.noise) {
            return Err(Error::arg(format!(
                "noise fraction {} outside [0, 1)",
                self.task.noise
            )));
        }
        self.train_config().validate(self.task.n_train)
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeResult {
    pub regime: String,
    pub train_size: usize,
    pub eval: EvalResult,
    /// Steps spent in each bucket (bandit regimes only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm_counts: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSweepRow {
    pub bucket: usize,
    pub size: usize,
    pub noisy: usize,
    pub eval: EvalResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub results: Vec<RegimeResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bucket_sweeps: Vec<(String, Vec<BucketSweepRow>)>,
}

/// Shared inputs of every regime.
struct Context<'a> {
    spec: &'a ModelSpec,
    splits: &'a Splits,
    cfg: TrainConfig,
    ranking: Option<&'a Ranking>,
    hash: &'a str,
}

enum RegimeOutput {
    Single(RegimeResult),
    Sweep(String, Vec<BucketSweepRow>),
}

impl Context<'_> {
    fn ranking(&self) -> Result<&Ranking> {
        self.ranking
            .ok_or_else(|| Error::MissingInput("regime needs influence scores".to_string()))
    }

    fn run(&self, regime: &Regime, dir: &Path) -> Result<RegimeOutput> {
        create_dir(dir)?;
        let name = regime.name();
        let s = self.splits;
        let single = |train_size: usize, out: trainer::TrainOutput| -> Result<RegimeOutput> {
            write_trace_csv(&out.trace, &dir.join("trace.csv"))?;
            let arm_counts = match &out.policy_log {
                Some(log) => {
                    log.write_csv(&dir.join("policy.csv"))?;
                    Some(arm_counts(
                        log,
                        log.rows.first().map_or(0, |r| r.policy.len()),
                    ))
                }
                None => None,
            };
            let result = RegimeResult {
                regime: name.clone(),
                train_size,
                eval: evaluate(self.spec, &out.params, &s.test)?,
                arm_counts,
            };
            write_json(&result, &dir.join("eval.json"))?;
            Ok(RegimeOutput::Single(result))
        };
        match regime {
            Regime::Baseline => {
                let out =
                    trainer::train(self.spec, &s.train, &s.dev, &self.cfg, &Sampler::Uniform)?;
                single(s.train.len(), out)
            }
            Regime::Filter { pct } => {
                let (kept, dropped) = percentile_split(&s.train, self.ranking()?, *pct)?;
                write_json(
                    &FilterManifest {
                        kept_ids: kept.ids(),
                        dropped_ids: dropped.into_iter().collect(),
                        pct: *pct,
                        config_hash: self.hash.to_string(),
                    },
                    &dir.join("filter.json"),
                )?;
                let out = trainer::train(self.spec, &kept, &s.dev, &self.cfg, &Sampler::Uniform)?;
                single(kept.len(), out)
            }
            Regime::Autocl { buckets, bandit } => {
                let assignment = quantile_buckets(self.ranking()?, *buckets)?;
                write_buckets_csv(&assignment, &dir.join("buckets.csv"))?;
                write_noise_histogram_csv(&assignment, &s.noise, &dir.join("noise_by_bucket.csv"))?;
                let sampler = Sampler::Buckets {
                    assignment: &assignment,
                    autocl: bandit,
                };
                let out = trainer::train(self.spec, &s.train, &s.dev, &self.cfg, &sampler)?;
                single(s.train.len(), out)
            }
            Regime::BucketSweep { buckets } => {
                let assignment = quantile_buckets(self.ranking()?, *buckets)?;
                write_buckets_csv(&assignment, &dir.join("buckets.csv"))?;
                let noisy: BTreeSet<u64> = s.noise.flipped_ids.iter().copied().collect();
                let noisy_counts = bucket_histogram(&assignment, &noisy)?;
                let sizes = assignment.sizes();
                let rows = (0..*buckets)
                    .into_par_iter()
                    .map(|b| {
                        let eval = train_on_bucket(
                            self.spec,
                            &s.train,
                            &s.test,
                            &assignment,
                            b,
                            &self.cfg,
                        )?;
                        Ok(BucketSweepRow {
                            bucket: b,
                            size: sizes[b],
                            noisy: noisy_counts[b],
                            eval,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                write_bucket_sweep_csv(&rows, &dir.join("bucket_sweep.csv"))?;
                Ok(RegimeOutput::Sweep(name, rows))
            }
        }
    }
}

/// Trains the scorer model on the training split, saving evenly spaced
/// checkpoints under `dir/checkpoints`, and scores the training split.
pub fn train_and_score(
    spec: &ModelSpec,
    splits: &Splits,
    cfg: &TrainConfig,
    influence: &InfluenceConfig,
    score_seed: u64,
    dir: &Path,
) -> Result<ScoreTable> {
    let cfg = cfg.clone().with_even_checkpoints(influence.checkpoints);
    let out = trainer::train(spec, &splits.train, &splits.dev, &cfg, &Sampler::Uniform)?;
    let ckpt_dir = dir.join("checkpoints");
    create_dir(&ckpt_dir)?;
    for c in &out.checkpoints {
        save_checkpoint(
            spec,
            c.step,
            &c.params,
            &ckpt_dir.join(checkpoint_file_name(c.step)),
        )?;
    }
    write_trace_csv(&out.trace, &dir.join("trace.csv"))?;
    let params: Vec<_> = out.checkpoints.into_iter().map(|c| c.params).collect();
    score_dataset(
        &influence.method(score_seed),
        spec,
        &params,
        &splits.train,
        influence.mask,
    )
}

/// `step_000123.json`: zero-padded so lexical order is step order.
pub fn checkpoint_file_name(step: usize) -> String {
    format!("step_{step:06}.json")
}

/// Runs every regime of `manifest` into `dir`.
///
/// Layout: `manifest.json`, `data/`, `scorer/` (checkpoints, trace,
/// `scores.csv`) when any regime needs scores, `regimes/<name>/`, then
/// `summary.json`, `eval_comparison.csv` and the `COMPLETE` marker.
/// Reruns of the same manifest produce byte-identical files.
pub fn run_experiment(manifest: &RunManifest, dir: &Path, force: bool) -> Result<RunSummary> {
    manifest.validate()?;
    prepare_run_dir(dir, force)?;
    let hash = manifest.hash();
    write_json(manifest, &dir.join("manifest.json"))?;

    let splits = manifest.task.splits()?;
    splits.save(&dir.join("data"))?;
    let spec = manifest.model.spec_for(&splits.train)?;
    let cfg = manifest.train_config();

    let scores = if manifest.regimes.iter().any(Regime::needs_scores) {
        let scorer_dir = dir.join("scorer");
        create_dir(&scorer_dir)?;
        let table = train_and_score(
            &spec,
            &splits,
            &cfg,
            &manifest.influence,
            manifest.seeds.score,
            &scorer_dir,
        )?;
        write_scores_csv(&table, &scorer_dir.join("scores.csv"))?;
        Some(table)
    } else {
        None
    };
    let ranking = scores.as_ref().map(rank);

    let ctx = Context {
        spec: &spec,
        splits: &splits,
        cfg,
        ranking: ranking.as_ref(),
        hash: &hash,
    };
    let regimes_dir = dir.join("regimes");
    let outputs = manifest
        .regimes
        .par_iter()
        .map(|r| ctx.run(r, &regimes_dir.join(r.name())))
        .collect::<Result<Vec<_>>>()?;

    let mut summary = RunSummary {
        config_hash: hash.clone(),
        results: Vec::new(),
        bucket_sweeps: Vec::new(),
    };
    for out in outputs {
        match out {
            RegimeOutput::Single(r) => summary.results.push(r),
            RegimeOutput::Sweep(name, rows) => summary.bucket_sweeps.push((name, rows)),
        }
    }
    write_json(&summary, &dir.join("summary.json"))?;
    write_eval_comparison_csv(&summary.results, &dir.join("eval_comparison.csv"))?;
    mark_complete(dir, &hash)?;
    Ok(summary)
}

fn csv_writer(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// `bucket,size,noisy,clean,noisy_fraction` — how injected noise spreads
/// over the influence buckets.
pub fn write_noise_histogram_csv(
    assignment: &BucketAssignment,
    noise: &NoiseReport,
    path: &Path,
) -> Result<()> {
    let noisy: BTreeSet<u64> = noise.flipped_ids.iter().copied().collect();
    let counts = bucket_histogram(assignment, &noisy)?;
    let mut w = csv_writer(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "bucket,size,noisy,clean,noisy_fraction").map_err(io)?;
    for (b, (&size, &n)) in assignment.sizes().iter().zip(&counts).enumerate() {
        let frac = if size == 0 {
            0.0
        } else {
            n as f64 / size as f64
        };
        writeln!(w, "{b},{size},{n},{},{frac}", size - n).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// `step,p0,…,p{K-1}`: the policy every `every` steps, plus the last step.
pub fn write_policy_over_time_csv(log: &PolicyLog, every: usize, path: &Path) -> Result<()> {
    if every == 0 {
        return Err(Error::arg("sampling interval must be positive"));
    }
    let k = log.rows.first().map_or(0, |r| r.policy.len());
    let mut w = csv_writer(path)?;
    let io = |e| Error::io(path, e);
    let header: Vec<String> = (0..k).map(|a| format!("p{a}")).collect();
    writeln!(w, "step,{}", header.join(",")).map_err(io)?;
    let last = log.rows.len().saturating_sub(1);
    for (i, r) in log.rows.iter().enumerate() {
        if i % every == 0 || i == last {
            let ps: Vec<String> = r.policy.iter().map(|p| p.to_string()).collect();
            writeln!(w, "{},{}", r.step, ps.join(",")).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// `regime,train_size,accuracy,macro_f1,loss`.
pub fn write_eval_comparison_csv(results: &[RegimeResult], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "regime,train_size,accuracy,macro_f1,loss").map_err(io)?;
    for r in results {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.regime, r.train_size, r.eval.accuracy, r.eval.macro_f1, r.eval.loss
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// `bucket,size,noisy,accuracy,macro_f1,loss`.
pub fn write_bucket_sweep_csv(rows: &[BucketSweepRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "bucket,size,noisy,accuracy,macro_f1,loss").map_err(io)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.bucket, r.size, r.noisy, r.eval.accuracy, r.eval.macro_f1, r.eval.loss
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
