use std::path::{Path, PathBuf};

use influxcl::autocl::read_policy_csv;
use influxcl::diffcore::ModelSpec;
use influxcl::experiment::{
    checkpoint_file_name, mark_complete, prepare_run_dir, read_json, run_experiment, runs_root,
    write_eval_comparison_csv, write_json, write_noise_histogram_csv, write_policy_over_time_csv,
    Generator, InfluenceConfig, ModelConfig, Regime, RegimeResult, RunManifest, Splits,
};
use influxcl::hashing::config_hash;
use influxcl::influence::{read_scores_csv, score_dataset, write_scores_csv};
use influxcl::ranking::{
    percentile_split, quantile_buckets, rank, read_buckets_csv, write_buckets_csv, FilterManifest,
};
use influxcl::stability::{stability_experiment, StabilitySetup, Variation};
use influxcl::tasks::save_jsonl;
use influxcl::trainer::{
    self, arm_counts, evaluate, load_checkpoint, save_checkpoint, write_trace_csv, AutoclConfig,
    Optimizer, Sampler, TrainConfig,
};
use influxcl::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::args::*;

/// Output directory for `command`: the explicit `--run-dir`, or a name
/// derived from the resolved configuration under the runs root.
fn run_dir(command: &str, out: &OutputArgs, hash: &str) -> Result<PathBuf> {
    let dir = out
        .run_dir
        .clone()
        .unwrap_or_else(|| runs_root().join(format!("{command}-{hash}")));
    prepare_run_dir(&dir, out.force)?;
    Ok(dir)
}

/// Absolute form of an input path, so hashes do not depend on the cwd.
fn input_path(path: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(path)
        .map_err(|_| Error::MissingInput(format!("{} not found", path.display())))
}

fn load_manifest(path: Option<&Path>) -> Result<RunManifest> {
    path.map_or_else(|| Ok(RunManifest::default()), RunManifest::load)
}

/// Writes `config.json` and the completion marker.
fn finish<T: Serialize>(dir: &Path, config: &T, hash: &str) -> Result<PathBuf> {
    write_json(config, &dir.join("config.json"))?;
    mark_complete(dir, hash)?;
    Ok(dir.to_path_buf())
}

pub fn gen_data(a: GenDataArgs) -> Result<PathBuf> {
    let mut task = load_manifest(a.manifest.as_deref())?.task;
    if let Some(kind) = a.task {
        task.generator = match (kind, task.generator) {
            (TaskKind::Clusters, g @ Generator::Clusters { .. })
            | (TaskKind::Bow, g @ Generator::Bow { .. }) => g,
            (TaskKind::Clusters, _) => Generator::Clusters {
                classes: 10,
                dim: 10,
                separation: 4.0,
            },
            (TaskKind::Bow, _) => Generator::Bow {
                classes: 4,
                vocab_size: 200,
            },
        };
    }
    match &mut task.generator {
        Generator::Clusters {
            classes,
            dim,
            separation,
        } => {
            if a.vocab_size.is_some() {
                return Err(Error::InvalidArgument(
                    "--vocab-size applies only to --task bow".into(),
                ));
            }
            *classes = a.classes.unwrap_or(*classes);
            *dim = a.dim.unwrap_or(*dim);
            *separation = a.separation.unwrap_or(*separation);
        }
        Generator::Bow {
            classes,
            vocab_size,
        } => {
            if a.dim.is_some() || a.separation.is_some() {
                return Err(Error::InvalidArgument(
                    "--dim and --separation apply only to --task clusters".into(),
                ));
            }
            *classes = a.classes.unwrap_or(*classes);
            *vocab_size = a.vocab_size.unwrap_or(*vocab_size);
        }
    }
    task.n_train = a.n.unwrap_or(task.n_train);
    task.n_dev = a.n_dev.unwrap_or(task.n_dev);
    task.n_test = a.n_test.unwrap_or(task.n_test);
    task.noise = a.noise.unwrap_or(task.noise);
    task.seed = a.seed.unwrap_or(task.seed);

    let splits = task.splits()?;
    let hash = config_hash(&task);
    let dir = run_dir("gen-data", &a.out, &hash)?;
    splits.save(&dir)?;
    write_json(&splits.noise, &dir.join("noise.json"))?;
    finish(&dir, &task, &hash)
}

/// Model, training and seed settings after applying flags over the manifest.
struct Training {
    manifest: RunManifest,
    model: ModelConfig,
    cfg: TrainConfig,
}

fn resolve_training(m: &ModelTrainArgs) -> Result<Training> {
    let manifest = load_manifest(m.manifest.as_deref())?;
    let mut model = manifest.model.clone();
    if let Some(h) = &m.hidden {
        model.hidden_widths = h.clone();
    }
    model.activation = m.activation.unwrap_or(model.activation);
    let mut cfg = manifest.train_config();
    cfg.steps = m.steps.unwrap_or(cfg.steps);
    cfg.batch_size = m.batch_size.unwrap_or(cfg.batch_size);
    cfg.learning_rate = m.lr.unwrap_or(cfg.learning_rate);
    cfg.eval_every = m.eval_every.unwrap_or(cfg.eval_every);
    cfg.init_seed = m.init_seed.unwrap_or(cfg.init_seed);
    cfg.order_seed = m.order_seed.unwrap_or(cfg.order_seed);
    if let Some(kind) = m.optimizer {
        cfg.optimizer = match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Momentum => Optimizer::SgdMomentum {
                momentum: m.momentum,
            },
            OptimizerKind::Adam => Optimizer::Adam {
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
            },
        };
    }
    // checkpoint steps are chosen per command
    cfg.checkpoint_steps.clear();
    Ok(Training {
        manifest,
        model,
        cfg,
    })
}

fn resolve_influence(manifest: &RunManifest, a: &MethodArgs) -> (InfluenceConfig, u64) {
    let mut inf = manifest.influence.clone();
    inf.method = a.method.unwrap_or(inf.method);
    inf.mask = a.mask.unwrap_or(inf.mask);
    inf.top_k = a.top_k.unwrap_or(inf.top_k);
    inf.iterations = a.iterations.unwrap_or(inf.iterations);
    inf.hvp_examples = a.hvp_examples.unwrap_or(inf.hvp_examples);
    inf.checkpoints = a.tracin_checkpoints.unwrap_or(inf.checkpoints);
    if a.no_projection {
        inf.projection_dim = None;
    } else if let Some(p) = a.projection {
        inf.projection_dim = Some(p);
    }
    (inf, a.score_seed.unwrap_or(manifest.seeds.score))
}

/// What `train` and `autocl` record so later commands can find their inputs.
#[derive(Debug, Serialize, Deserialize)]
struct TrainRecord {
    data: PathBuf,
    model: ModelConfig,
    spec: ModelSpec,
    train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    buckets: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    autocl: Option<AutoclConfig>,
}

fn save_training(
    dir: &Path,
    spec: &ModelSpec,
    splits: &Splits,
    out: &trainer::TrainOutput,
    regime: String,
) -> Result<()> {
    let ckpt_dir = dir.join("checkpoints");
    if !out.checkpoints.is_empty() {
        std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::Io {
            path: ckpt_dir.clone(),
            source: e,
        })?;
    }
    for c in &out.checkpoints {
        save_checkpoint(
            spec,
            c.step,
            &c.params,
            &ckpt_dir.join(checkpoint_file_name(c.step)),
        )?;
    }
    let steps = out.trace.last().map_or(0, |r| r.step);
    save_checkpoint(spec, steps, &out.params, &dir.join("final.json"))?;
    write_trace_csv(&out.trace, &dir.join("trace.csv"))?;
    let policy_arms = out.policy_log.as_ref().map(|log| {
        let k = log.rows.first().map_or(0, |r| r.policy.len());
        arm_counts(log, k)
    });
    if let Some(log) = &out.policy_log {
        log.write_csv(&dir.join("policy.csv"))?;
    }
    let result = RegimeResult {
        regime,
        train_size: splits.train.len(),
        eval: evaluate(spec, &out.params, &splits.test)?,
        arm_counts: policy_arms,
    };
    write_json(&result, &dir.join("eval.json"))
}

pub fn train(a: TrainArgs) -> Result<PathBuf> {
    let data = input_path(&a.data)?;
    let splits = Splits::load(&data)?;
    let t = resolve_training(&a.model)?;
    let n_ckpt = a.checkpoints.unwrap_or(t.manifest.influence.checkpoints);
    let cfg = if n_ckpt > 0 {
        t.cfg.with_even_checkpoints(n_ckpt)
    } else {
        t.cfg
    };
    let spec = t.model.spec_for(&splits.train)?;
    let record = TrainRecord {
        data,
        model: t.model,
        spec: spec.clone(),
        train: cfg,
        buckets: None,
        autocl: None,
    };
    let hash = config_hash(&record);
    let dir = run_dir("train", &a.out, &hash)?;
    let out = trainer::train(
        &spec,
        &splits.train,
        &splits.dev,
        &record.train,
        &Sampler::Uniform,
    )?;
    save_training(&dir, &spec, &splits, &out, "baseline".to_string())?;
    finish(&dir, &record, &hash)
}

#[derive(Debug, Serialize)]
struct ScoreRecord {
    run: PathBuf,
    data: PathBuf,
    checkpoints: Vec<PathBuf>,
    influence: InfluenceConfig,
    score_seed: u64,
}

pub fn score(a: ScoreArgs) -> Result<PathBuf> {
    let run = input_path(&a.run)?;
    let record_path = run.join("config.json");
    if !record_path.is_file() {
        return Err(Error::MissingInput(format!(
            "{} is not a training run",
            run.display()
        )));
    }
    let record: TrainRecord = read_json(&record_path)?;
    let data = match &a.data {
        Some(d) => input_path(d)?,
        None => record.data.clone(),
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(run.join("checkpoints"))
        .map(|entries| {
            entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect()
        })
        .unwrap_or_default();
    if files.is_empty() {
        return Err(Error::MissingInput(format!(
            "no checkpoints under {}",
            run.join("checkpoints").display()
        )));
    }
    files.sort();
    let manifest = load_manifest(a.manifest.as_deref())?;
    let (influence, score_seed) = resolve_influence(&manifest, &a.method);
    let splits = Splits::load(&data)?;

    let mut params = Vec::with_capacity(files.len());
    for f in &files {
        let (spec, _, p) = load_checkpoint(f)?;
        if spec != record.spec {
            return Err(Error::Shape(format!(
                "{}: checkpoint spec differs from the run",
                f.display()
            )));
        }
        params.push(p);
    }
    let method = influence.method(score_seed);
    let config = ScoreRecord {
        run,
        data,
        checkpoints: files,
        influence,
        score_seed,
    };
    let hash = config_hash(&config);
    let dir = run_dir("score", &a.out, &hash)?;
    let table = score_dataset(
        &method,
        &record.spec,
        &params,
        &splits.train,
        config.influence.mask,
    )?;
    write_scores_csv(&table, &dir.join("scores.csv"))?;
    finish(&dir, &config, &hash)
}

pub fn stability(a: StabilityArgs) -> Result<PathBuf> {
    let data = input_path(&a.data)?;
    let splits = Splits::load(&data)?;
    let t = resolve_training(&a.model)?;
    let (influence, score_seed) = resolve_influence(&t.manifest, &a.method);
    // TracIn needs intermediate checkpoints from both runs
    let cfg = t.cfg.with_even_checkpoints(influence.checkpoints);
    let variation = Variation {
        batch_size: a.vary_batch_size,
        data_order_seed: a.vary_order_seed,
        init_seed: a.vary_init_seed,
        width_factor: a.width_factor,
        depth: a.depth,
    };
    let spec = t.model.spec_for(&splits.train)?;
    #[derive(Serialize)]
    struct Config<'a> {
        data: &'a Path,
        spec: &'a ModelSpec,
        train: &'a TrainConfig,
        influence: &'a InfluenceConfig,
        score_seed: u64,
        variation: &'a Variation,
    }
    let config = Config {
        data: &data,
        spec: &spec,
        train: &cfg,
        influence: &influence,
        score_seed,
        variation: &variation,
    };
    let hash = config_hash(&config);
    let setup = StabilitySetup {
        spec: spec.clone(),
        train: &splits.train,
        dev: &splits.dev,
        test: &splits.test,
        train_cfg: cfg.clone(),
        method: influence.method(score_seed),
        mask: influence.mask,
    };
    let dir = run_dir("stability", &a.out, &hash)?;
    let report = stability_experiment(&setup, &variation)?;
    write_json(&report, &dir.join("report.json"))?;
    finish(&dir, &config, &hash)
}

pub fn filter(a: FilterArgs) -> Result<PathBuf> {
    let data = input_path(&a.data)?;
    let scores_path = input_path(&a.scores)?;
    let splits = Splits::load(&data)?;
    let table = read_scores_csv(&scores_path)?;
    #[derive(Serialize)]
    struct Config<'a> {
        data: &'a Path,
        scores: &'a Path,
        pct: f64,
    }
    let config = Config {
        data: &data,
        scores: &scores_path,
        pct: a.pct,
    };
    let hash = config_hash(&config);
    let (kept, dropped) = percentile_split(&splits.train, &rank(&table), a.pct)?;
    let dir = run_dir("filter", &a.out, &hash)?;
    save_jsonl(&kept, &dir.join("train.jsonl"))?;
    save_jsonl(&splits.dev, &dir.join("dev.jsonl"))?;
    save_jsonl(&splits.test, &dir.join("test.jsonl"))?;
    write_json(
        &FilterManifest {
            kept_ids: kept.ids(),
            dropped_ids: dropped.into_iter().collect(),
            pct: a.pct,
            config_hash: hash.clone(),
        },
        &dir.join("filter.json"),
    )?;
    finish(&dir, &config, &hash)
}

pub fn buckets(a: BucketsArgs) -> Result<PathBuf> {
    let scores_path = input_path(&a.scores)?;
    let table = read_scores_csv(&scores_path)?;
    #[derive(Serialize)]
    struct Config<'a> {
        scores: &'a Path,
        k: usize,
    }
    let config = Config {
        scores: &scores_path,
        k: a.k,
    };
    let hash = config_hash(&config);
    let assignment = quantile_buckets(&rank(&table), a.k)?;
    let dir = run_dir("buckets", &a.out, &hash)?;
    write_buckets_csv(&assignment, &dir.join("buckets.csv"))?;
    finish(&dir, &config, &hash)
}

pub fn autocl(a: AutoclArgs) -> Result<PathBuf> {
    let data = input_path(&a.data)?;
    let buckets_path = input_path(&a.buckets)?;
    let splits = Splits::load(&data)?;
    let assignment = read_buckets_csv(&buckets_path, None)?;
    let t = resolve_training(&a.model)?;
    let mut bandit = t
        .manifest
        .regimes
        .iter()
        .find_map(|r| match r {
            Regime::Autocl { bandit, .. } => Some(bandit.clone()),
            _ => None,
        })
        .unwrap_or_default();
    bandit.variant = a.variant.unwrap_or(bandit.variant);
    bandit.reward = a.reward.unwrap_or(bandit.reward);
    bandit.gamma = a.gamma.unwrap_or(bandit.gamma);
    bandit.eta = a.eta.unwrap_or(bandit.eta);
    bandit.alpha = a.alpha.unwrap_or(bandit.alpha);
    bandit.window = a.window.unwrap_or(bandit.window);
    bandit.reward_batch_size = a.reward_batch_size.unwrap_or(bandit.reward_batch_size);
    bandit.bandit_seed = a.bandit_seed.unwrap_or(bandit.bandit_seed);

    let spec = t.model.spec_for(&splits.train)?;
    let record = TrainRecord {
        data,
        model: t.model,
        spec: spec.clone(),
        train: t.cfg,
        buckets: Some(buckets_path),
        autocl: Some(bandit),
    };
    let hash = config_hash(&record);
    let bandit = record.autocl.as_ref().expect("set above");
    let sampler = Sampler::Buckets {
        assignment: &assignment,
        autocl: bandit,
    };
    let dir = run_dir("autocl", &a.out, &hash)?;
    let out = trainer::train(&spec, &splits.train, &splits.dev, &record.train, &sampler)?;
    let name = format!(
        "autocl_k{}_{}_{}",
        assignment.k(),
        bandit.variant,
        bandit.reward
    );
    save_training(&dir, &spec, &splits, &out, name)?;
    finish(&dir, &record, &hash)
}

pub fn report(a: ReportArgs) -> Result<PathBuf> {
    if a.buckets.is_none() && a.policy.is_none() && a.evals.is_empty() {
        return Err(Error::InvalidArgument(
            "nothing to report: pass --data with --buckets, --policy, or --eval".into(),
        ));
    }
    let data = a.data.as_deref().map(input_path).transpose()?;
    let buckets = a.buckets.as_deref().map(input_path).transpose()?;
    let policy = a.policy.as_deref().map(input_path).transpose()?;
    let evals = a
        .evals
        .iter()
        .map(|p| input_path(p))
        .collect::<Result<Vec<_>>>()?;
    #[derive(Serialize)]
    struct Config<'a> {
        data: &'a Option<PathBuf>,
        buckets: &'a Option<PathBuf>,
        policy: &'a Option<PathBuf>,
        every: usize,
        evals: &'a [PathBuf],
    }
    let config = Config {
        data: &data,
        buckets: &buckets,
        policy: &policy,
        every: a.every,
        evals: &evals,
    };
    let hash = config_hash(&config);
    // read everything before creating the output directory
    let histogram = match (&data, &buckets) {
        (Some(d), Some(b)) => Some((Splits::load(d)?.noise, read_buckets_csv(b, None)?)),
        _ => None,
    };
    let log = policy.as_deref().map(read_policy_csv).transpose()?;
    let results = evals
        .iter()
        .map(|p| read_json::<RegimeResult>(p))
        .collect::<Result<Vec<_>>>()?;

    let dir = run_dir("report", &a.out, &hash)?;
    if let Some((noise, assignment)) = &histogram {
        write_noise_histogram_csv(assignment, noise, &dir.join("noise_by_bucket.csv"))?;
    }
    if let Some(log) = &log {
        write_policy_over_time_csv(log, a.every, &dir.join("policy_over_time.csv"))?;
    }
    if !results.is_empty() {
        write_eval_comparison_csv(&results, &dir.join("eval_comparison.csv"))?;
    }
    finish(&dir, &config, &hash)
}

pub fn run(a: RunArgs) -> Result<PathBuf> {
    let manifest = RunManifest::load(&a.manifest)?;
    manifest.validate()?;
    let hash = manifest.hash();
    let dir = a
        .out
        .run_dir
        .clone()
        .unwrap_or_else(|| runs_root().join(format!("run-{hash}")));
    run_experiment(&manifest, &dir, a.out.force)?;
    Ok(dir)
}
