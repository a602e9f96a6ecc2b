//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p influxcl-core --test acceptance`. The process
//! fails when any criterion fails, except those listed in [`KNOWN_RED`],
//! which are still reported as FAIL (see the README for why they fail).

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::{
    dot, fd_grad, jacobi_eigen, output_layer_grad, output_layer_hessian, random_triple, rel_err,
    rel_err_inf,
};
use influxcl::autocl::{simulate_bernoulli, BanditState, RewardKind, Variant};
use influxcl::diffcore::{forward_loss, grad, hvp, Activation, LayerMask, MaskSelector, ModelSpec};
use influxcl::experiment::{
    run_experiment, Generator, InfluenceConfig, ModelConfig, Regime, RunManifest, RunSummary,
    Seeds, Splits, TaskConfig,
};
use influxcl::influence::{
    abif_self_influence, fit_projection, read_scores_csv, tracin_self_influence, AbifConfig,
    ScoreMethod, ScoreTable,
};
use influxcl::ranking::{quantile_buckets, rank, recall_at_top};
use influxcl::stability::{
    churn, stability_experiment, StabilityReport, StabilitySetup, Variation,
};
use influxcl::tasks::{
    default_stopwords, gen_bow_text, signal_length, signal_lexical_overlap, signal_word_rarity,
    CorpusStats,
};
use influxcl::trainer::{evaluate, train, AutoclConfig, Sampler, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Criteria known to fail at desk scale; reported, but not fatal.
const KNOWN_RED: &[u32] = &[6];

// tolerances
const GRAD_REL_TOL: f64 = 1e-4;
const HVP_REL_TOL: f64 = 1e-3;
const FD_STEP: f64 = 1e-4;
const ABIF_REL_TOL: f64 = 1e-5;
const TRACIN_REL_TOL: f64 = 1e-12;
const RECALL30_MIN: f64 = 0.80;
const STABILITY_SPEARMAN_MIN: f64 = 0.7;
const BANDIT_HITS_MIN: usize = 9;
const AUTOCL_FILTER_SLACK: f64 = 0.005;
const CLEAN_DATA_BAND: f64 = 0.005;
const SIGNAL_TOL: f64 = 1e-12;

// desk-scale setup shared by the end-to-end criteria
const SEEDS: [u64; 3] = [0, 1, 2];
const DATA_SEED_BASE: u64 = 100;
const DESK_ETA: f64 = 0.1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn clusters_task(noise: f64, seed: u64) -> TaskConfig {
    TaskConfig {
        generator: Generator::Clusters {
            classes: 10,
            dim: 10,
            separation: 4.0,
        },
        n_train: 2000,
        n_dev: 500,
        n_test: 2000,
        noise,
        seed: DATA_SEED_BASE + seed,
    }
}

fn desk_bandit(seed: u64) -> AutoclConfig {
    AutoclConfig {
        variant: Variant::Exp3s,
        reward: RewardKind::Cosine,
        eta: DESK_ETA,
        bandit_seed: seed,
        ..AutoclConfig::default()
    }
}

fn desk_manifest(task: TaskConfig, regimes: Vec<Regime>, seed: u64) -> RunManifest {
    RunManifest {
        task,
        model: ModelConfig {
            hidden_widths: vec![16],
            activation: Activation::Tanh,
        },
        train: TrainConfig::default(),
        influence: InfluenceConfig::default(),
        regimes,
        seeds: Seeds {
            init: seed,
            order: seed,
            score: seed,
        },
    }
}

fn run(manifest: &RunManifest, root: &Path, name: &str) -> RunSummary {
    run_experiment(manifest, &root.join(name), false).expect("experiment runs")
}

fn accuracy(summary: &RunSummary, regime: &str) -> f64 {
    summary
        .results
        .iter()
        .find(|r| r.regime == regime)
        .unwrap_or_else(|| panic!("no regime {regime}"))
        .eval
        .accuracy
}

fn criterion_1() -> Outcome {
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    for seed in 0..8 {
        let (spec, params, batch) = random_triple(seed);
        let all = LayerMask::for_spec(MaskSelector::All, &spec).unwrap();
        let loss = |x: &[f64]| {
            forward_loss(&spec, &params.with_values(x.to_vec()).unwrap(), &batch)
                .unwrap()
                .0
        };
        let g = grad(&spec, &params, &batch, &all).unwrap();
        worst_g = worst_g.max(rel_err_inf(&g, &fd_grad(loss, params.values(), FD_STEP)));

        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let v: Vec<f64> = (0..params.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let hv = hvp(&spec, &params, &batch, &v, &all).unwrap();
        let at = |sign: f64| {
            let x: Vec<f64> = params
                .values()
                .iter()
                .zip(&v)
                .map(|(p, d)| p + sign * FD_STEP * d)
                .collect();
            grad(&spec, &params.with_values(x).unwrap(), &batch, &all).unwrap()
        };
        let (up, down) = (at(1.0), at(-1.0));
        let fd: Vec<f64> = up
            .iter()
            .zip(&down)
            .map(|(a, b)| (a - b) / (2.0 * FD_STEP))
            .collect();
        worst_h = worst_h.max(rel_err_inf(&hv, &fd));
    }
    outcome(
        worst_g < GRAD_REL_TOL && worst_h < HVP_REL_TOL,
        format!("8 triples; max rel err grad {worst_g:.2e} (< {GRAD_REL_TOL:e}), hvp {worst_h:.2e} (< {HVP_REL_TOL:e})"),
    )
}

fn criterion_2() -> Outcome {
    let (mut worst_eig, mut worst_inf, mut max_dim) = (0.0f64, 0.0f64, 0);
    let mut counts_ok = true;
    for seed in [2u64, 5, 9] {
        let ds = influxcl::tasks::gen_gaussian_clusters(60, 3, 4, 3.0, seed).unwrap();
        let dev = influxcl::tasks::gen_gaussian_clusters(30, 3, 4, 3.0, seed + 50).unwrap();
        let spec = ModelSpec::new(4, vec![5], 3, Activation::Tanh).unwrap();
        let cfg = TrainConfig {
            steps: 150,
            batch_size: 16,
            init_seed: seed,
            order_seed: seed,
            ..TrainConfig::default()
        };
        let params = train(&spec, &ds, &dev, &cfg, &Sampler::Uniform)
            .unwrap()
            .params;
        // output layer with frozen features: a linear-softmax model
        let mask = LayerMask::for_spec(MaskSelector::Last, &spec).unwrap();
        let dim = mask.masked_dim();
        max_dim = max_dim.max(dim);
        let abif = AbifConfig {
            top_k: dim,
            n_iters: dim,
            hvp_examples: ds.len(),
            seed,
        };
        let proj = fit_projection(&spec, &params, &ds, &mask, &abif).unwrap();
        let xs: Vec<Vec<f64>> = ds.examples().iter().map(|e| e.features.clone()).collect();
        let (vals, vecs) = jacobi_eigen(output_layer_hessian(&spec, &params, &xs));
        let keep: Vec<(f64, &Vec<f64>)> = vals
            .iter()
            .copied()
            .zip(&vecs)
            .filter(|(l, _)| *l > 1e-8 * vals[0])
            .collect();
        counts_ok &= proj.eigenvalues().len() == keep.len();
        for (got, (want, _)) in proj.eigenvalues().iter().zip(&keep) {
            worst_eig = worst_eig.max(rel_err(*got, *want));
        }
        for (i, ex) in ds.examples().iter().enumerate() {
            let g = output_layer_grad(&spec, &params, &ex.features, ex.label);
            let exact: f64 = keep.iter().map(|(l, v)| dot(v, &g).powi(2) / l).sum();
            let gm =
                mask.gather(&grad(&spec, &params, &ds.batch_of(&[i]).unwrap(), &mask).unwrap());
            worst_inf = worst_inf.max(rel_err(abif_self_influence(&proj, &gm).unwrap(), exact));
        }
    }
    outcome(
        counts_ok && worst_eig < ABIF_REL_TOL && worst_inf < ABIF_REL_TOL,
        format!(
            "dim <= {max_dim}, 3 models; max rel err eigenvalues {worst_eig:.2e}, self-influence {worst_inf:.2e} (< {ABIF_REL_TOL:e})"
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let (spec, params, batch) = random_triple(seed);
        let mask = LayerMask::for_spec(MaskSelector::All, &spec).unwrap();
        for i in 0..batch.len() {
            let ex = influxcl::tasks::Example {
                id: i as u64,
                features: batch.row(i).to_vec(),
                label: batch.labels()[i],
                noisy: None,
                text_tokens: None,
            };
            let single = batch.single(i);
            let g = grad(&spec, &params, &single, &mask).unwrap();
            let got = tracin_self_influence(std::slice::from_ref(&params), &spec, &ex, &mask, None)
                .unwrap();
            worst = worst.max(rel_err(got, dot(&g, &g)));
        }
    }
    outcome(
        worst <= TRACIN_REL_TOL,
        format!("max rel err {worst:.2e} (<= {TRACIN_REL_TOL:e})"),
    )
}

/// Noisy-task runs shared by criteria 4 and 10: scorer, scores and a
/// ten-bucket sweep per seed.
struct NoisyRuns {
    recalls: Vec<[f64; 3]>,
    sweeps: Vec<Vec<f64>>,
}

fn noisy_runs(root: &Path) -> NoisyRuns {
    let per_seed: Vec<([f64; 3], Vec<f64>)> = SEEDS
        .par_iter()
        .map(|&s| {
            let m = desk_manifest(
                clusters_task(0.1, s),
                vec![Regime::BucketSweep { buckets: 10 }],
                s,
            );
            let name = format!("noisy10-{s}");
            let summary = run(&m, root, &name);
            let dir = root.join(&name);
            let scores = read_scores_csv(&dir.join("scorer/scores.csv")).unwrap();
            let splits = Splits::load(&dir.join("data")).unwrap();
            let r = [10.0, 20.0, 30.0].map(|p| recall_at_top(&scores, &splits.noise, p).unwrap());
            let sweep = summary.bucket_sweeps[0]
                .1
                .iter()
                .map(|row| row.eval.accuracy)
                .collect();
            (r, sweep)
        })
        .collect();
    let (recalls, sweeps) = per_seed.into_iter().unzip();
    NoisyRuns { recalls, sweeps }
}

fn criterion_4(runs: &NoisyRuns) -> Outcome {
    let monotone = runs.recalls.iter().all(|r| r[0] <= r[1] && r[1] <= r[2]);
    let m: Vec<f64> = (0..3)
        .map(|i| mean(&runs.recalls.iter().map(|r| r[i]).collect::<Vec<_>>()))
        .collect();
    let per_seed: Vec<String> = runs
        .recalls
        .iter()
        .map(|r| format!("{:.3}/{:.3}/{:.3}", r[0], r[1], r[2]))
        .collect();
    outcome(
        m[2] >= RECALL30_MIN && m[2] >= m[0] && monotone,
        format!(
            "mean recall@10/20/30% = {:.3}/{:.3}/{:.3} (need @30% >= {RECALL30_MIN}); per seed {}; monotone per seed: {monotone}",
            m[0],
            m[1],
            m[2],
            per_seed.join(", ")
        ),
    )
}

fn stability_setup<'a>(splits: &'a Splits, seed: u64) -> StabilitySetup<'a> {
    StabilitySetup {
        spec: ModelSpec::new(10, vec![16], 10, Activation::Tanh).unwrap(),
        train: &splits.train,
        dev: &splits.dev,
        test: &splits.test,
        train_cfg: TrainConfig {
            init_seed: seed,
            order_seed: seed,
            ..TrainConfig::default()
        },
        method: ScoreMethod::Abif(AbifConfig {
            seed,
            ..AbifConfig::default()
        }),
        mask: MaskSelector::Last,
    }
}

fn criterion_5() -> Outcome {
    let reports: Vec<(StabilityReport, StabilityReport)> = SEEDS
        .par_iter()
        .map(|&s| {
            let splits = clusters_task(0.1, s).splits().unwrap();
            let setup = stability_setup(&splits, s);
            let varied = Variation {
                batch_size: Some(64),
                data_order_seed: Some(s + 50),
                init_seed: Some(s + 70),
                ..Variation::default()
            };
            (
                stability_experiment(&setup, &varied).unwrap(),
                stability_experiment(&setup, &Variation::default()).unwrap(),
            )
        })
        .collect();
    let varied_ok = reports
        .iter()
        .all(|(v, _)| v.spearman >= STABILITY_SPEARMAN_MIN);
    let same_ok = reports
        .iter()
        .all(|(_, i)| i.spearman == 1.0 && i.churn == 0.0);
    let sp: Vec<String> = reports
        .iter()
        .map(|(v, _)| format!("{:.3}", v.spearman))
        .collect();
    outcome(
        varied_ok && same_ok,
        format!(
            "varied batch/order/init Spearman {} (need >= {STABILITY_SPEARMAN_MIN} on 3/3); identical config Spearman==1 & churn==0: {same_ok}",
            sp.join(", ")
        ),
    )
}

fn criterion_6() -> Outcome {
    let seeds: Vec<u64> = (0..5).collect();
    let pairs: Vec<(StabilityReport, StabilityReport)> = seeds
        .par_iter()
        .map(|&s| {
            let splits = clusters_task(0.1, s).splits().unwrap();
            let setup = stability_setup(&splits, s);
            let seed_only = Variation {
                init_seed: Some(s + 70),
                ..Variation::default()
            };
            let wider = Variation {
                width_factor: Some(2),
                ..Variation::default()
            };
            (
                stability_experiment(&setup, &seed_only).unwrap(),
                stability_experiment(&setup, &wider).unwrap(),
            )
        })
        .collect();
    let churn_seed = mean(&pairs.iter().map(|p| p.0.churn).collect::<Vec<_>>());
    let churn_wide = mean(&pairs.iter().map(|p| p.1.churn).collect::<Vec<_>>());
    let sp_seed = mean(&pairs.iter().map(|p| p.0.spearman).collect::<Vec<_>>());
    let sp_wide = mean(&pairs.iter().map(|p| p.1.spearman).collect::<Vec<_>>());
    outcome(
        churn_wide > churn_seed && sp_wide < sp_seed,
        format!(
            "mean churn width x2 {churn_wide:.2}% vs seed-only {churn_seed:.2}% (need >); mean Spearman {sp_wide:.3} vs {sp_seed:.3} (need <)"
        ),
    )
}

fn criterion_7() -> Outcome {
    let gold = vec![0usize; 100];
    let mut a = vec![0usize; 100];
    let mut b = vec![0usize; 100];
    b[..9].fill(1); // A right, B wrong on 9%
    a[9..19].fill(1); // B right, A wrong on 10%
    a[40..60].fill(1); // both wrong on 20%
    b[40..60].fill(2);
    let c = churn(&a, &b, &gold).unwrap();
    outcome(c == 19.0, format!("9% + 10% -> {c}%"))
}

fn criterion_8() -> Outcome {
    let (k, gamma, eta, steps) = (10, 0.01, 0.001, 20_000);
    let mut hits = 0;
    let mut floor_ok = true;
    let mut identical = true;
    for seed in 0..10u64 {
        let best = (seed as usize * 7) % k;
        let mut means = vec![0.5; k];
        means[best] = 0.7;
        let mut exp3 = BanditState::new(k, gamma, eta, Variant::Exp3, 0.0).unwrap();
        let (log, _) = simulate_bernoulli(&mut exp3, &means, steps, seed).unwrap();
        let p = exp3.policy();
        let argmax = (0..k).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        hits += usize::from(argmax == best);
        floor_ok &= log
            .rows
            .iter()
            .chain(std::iter::once(&influxcl::autocl::PolicyRow {
                step: steps as u64,
                arm: 0,
                policy: p,
                reward_raw: 0.0,
                reward_scaled: 0.0,
            }))
            .all(|r| r.policy.iter().all(|&x| x >= gamma / k as f64));
        let mut exp3s = BanditState::new(k, gamma, eta, Variant::Exp3s, 0.0).unwrap();
        let (log_s, _) = simulate_bernoulli(&mut exp3s, &means, steps, seed).unwrap();
        identical &= log_s == log;
    }
    outcome(
        hits >= BANDIT_HITS_MIN && floor_ok && identical,
        format!("best arm identified {hits}/10 (need >= {BANDIT_HITS_MIN}); floor gamma/K every step: {floor_ok}; exp3s(alpha=0) log == exp3 log: {identical}"),
    )
}

fn criterion_9(root: &Path) -> Outcome {
    let pcts = [5.0, 10.0, 20.0, 30.0];
    let summaries: Vec<RunSummary> = SEEDS
        .par_iter()
        .map(|&s| {
            let mut regimes = vec![Regime::Baseline];
            regimes.extend(pcts.iter().map(|&pct| Regime::Filter { pct }));
            regimes.push(Regime::Autocl {
                buckets: 10,
                bandit: desk_bandit(s),
            });
            run(
                &desk_manifest(clusters_task(0.3, s), regimes, s),
                root,
                &format!("noisy30-{s}"),
            )
        })
        .collect();
    let avg = |name: &str| {
        mean(
            &summaries
                .iter()
                .map(|sm| accuracy(sm, name))
                .collect::<Vec<_>>(),
        )
    };
    let base = avg("baseline");
    let autocl = avg("autocl_k10_exp3s_cosine");
    let filters: Vec<(f64, f64)> = pcts
        .iter()
        .map(|&p| (p, avg(&format!("filter_{p}"))))
        .collect();
    let (best_pct, best) =
        filters
            .iter()
            .copied()
            .fold((0.0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
    let table: Vec<String> = filters
        .iter()
        .map(|(p, a)| format!("{p}%:{a:.4}"))
        .collect();
    outcome(
        autocl >= base && autocl >= best - AUTOCL_FILTER_SLACK,
        format!(
            "AutoCL {autocl:.4} vs baseline {base:.4} and best filter {best:.4} ({best_pct}%) - {AUTOCL_FILTER_SLACK}; filters {}",
            table.join(" ")
        ),
    )
}

fn criterion_10(runs: &NoisyRuns) -> Outcome {
    let k = runs.sweeps[0].len();
    let per_bucket: Vec<f64> = (0..k)
        .map(|b| mean(&runs.sweeps.iter().map(|s| s[b]).collect::<Vec<_>>()))
        .collect();
    let mut sorted = per_bucket.clone();
    sorted.sort_by(f64::total_cmp);
    let median = (sorted[k / 2 - 1] + sorted[k / 2]) / 2.0;
    let top = per_bucket[k - 1];
    let chance = 1.0 / 10.0;
    let shown: Vec<String> = per_bucket.iter().map(|a| format!("{a:.3}")).collect();
    outcome(
        top < median && top > chance,
        format!(
            "top bucket {top:.3} vs median {median:.3} and chance {chance:.3}; per bucket (low -> high influence) {}",
            shown.join(" ")
        ),
    )
}

fn criterion_11(root: &Path) -> Outcome {
    let summaries: Vec<RunSummary> = SEEDS
        .par_iter()
        .map(|&s| {
            let regimes = vec![
                Regime::Baseline,
                Regime::Autocl {
                    buckets: 10,
                    bandit: desk_bandit(s),
                },
            ];
            run(
                &desk_manifest(clusters_task(0.0, s), regimes, s),
                root,
                &format!("clean-{s}"),
            )
        })
        .collect();
    let base = mean(
        &summaries
            .iter()
            .map(|sm| accuracy(sm, "baseline"))
            .collect::<Vec<_>>(),
    );
    let autocl = mean(
        &summaries
            .iter()
            .map(|sm| accuracy(sm, "autocl_k10_exp3s_cosine"))
            .collect::<Vec<_>>(),
    );
    outcome(
        (autocl - base).abs() <= CLEAN_DATA_BAND,
        format!(
            "AutoCL {autocl:.4} vs baseline {base:.4}: |diff| {:.4} (<= {CLEAN_DATA_BAND})",
            (autocl - base).abs()
        ),
    )
}

fn criterion_12() -> Outcome {
    // (a) signals against brute force on a 1k-sentence corpus
    let corpus = gen_bow_text(1000, 300, 4, 12).unwrap();
    let sentences: Vec<Vec<String>> = corpus
        .examples()
        .iter()
        .map(|e| e.text_tokens.clone().unwrap())
        .collect();
    let stats = CorpusStats::from_dataset(&corpus);
    let total: usize = sentences.iter().map(Vec::len).sum();
    let count = |w: &str| {
        sentences
            .iter()
            .flatten()
            .filter(|t| t.as_str() == w)
            .count()
    };
    let mut worst = 0.0f64;
    for (ex, s) in corpus.examples().iter().zip(&sentences).step_by(10) {
        let want: f64 = s
            .iter()
            .map(|w| -(count(w) as f64 / total as f64).ln())
            .sum();
        worst = worst.max((signal_word_rarity(&stats, ex) - want).abs() / want.max(1.0));
    }
    let stop = default_stopwords();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..300 {
        let q = &sentences[rng.random_range(0..1000)];
        let c = &sentences[rng.random_range(0..1000)];
        let mut types: Vec<&String> = Vec::new();
        for t in q.iter().filter(|t| !stop.contains(*t)) {
            if !types.contains(&t) {
                types.push(t);
            }
        }
        let want = types.iter().filter(|t| c.contains(t)).count() as f64 / types.len() as f64;
        worst = worst.max((signal_lexical_overlap(q, c, &stop).unwrap() - want).abs());
    }

    // (b) length buckets do not help beyond seed noise
    let results: Vec<(f64, f64)> = SEEDS
        .par_iter()
        .map(|&s| {
            let task = TaskConfig {
                generator: Generator::Bow {
                    classes: 10,
                    vocab_size: 1000,
                },
                n_train: 2000,
                n_dev: 500,
                n_test: 2000,
                noise: 0.0,
                seed: DATA_SEED_BASE + s,
            };
            let splits = task.splits().unwrap();
            let spec = ModelConfig::default().spec_for(&splits.train).unwrap();
            let cfg = TrainConfig {
                init_seed: s,
                order_seed: s,
                ..TrainConfig::default()
            };
            let base = train(&spec, &splits.train, &splits.dev, &cfg, &Sampler::Uniform).unwrap();
            let lengths = ScoreTable::from_scores(
                splits
                    .train
                    .examples()
                    .iter()
                    .map(|e| (e.id, signal_length(e))),
            )
            .unwrap();
            let buckets = quantile_buckets(&rank(&lengths), 10).unwrap();
            let bandit = desk_bandit(s);
            let sampler = Sampler::Buckets {
                assignment: &buckets,
                autocl: &bandit,
            };
            let cl = train(&spec, &splits.train, &splits.dev, &cfg, &sampler).unwrap();
            (
                evaluate(&spec, &base.params, &splits.test)
                    .unwrap()
                    .accuracy,
                evaluate(&spec, &cl.params, &splits.test).unwrap().accuracy,
            )
        })
        .collect();
    let base: Vec<f64> = results.iter().map(|r| r.0).collect();
    let cl: Vec<f64> = results.iter().map(|r| r.1).collect();
    let gain = mean(&cl) - mean(&base);
    let sd = sample_sd(&base);
    outcome(
        worst <= SIGNAL_TOL && gain <= sd,
        format!(
            "signal max err {worst:.1e} (<= {SIGNAL_TOL:e}); length-bucket AutoCL gain {gain:+.4} vs baseline seed SD {sd:.4} (baseline {:.4}, AutoCL {:.4})",
            mean(&base),
            mean(&cl)
        ),
    )
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let root = tmp.path();
    let start = Instant::now();
    let mut noisy: Option<NoisyRuns> = None;
    let mut failed = Vec::new();
    let mut known = Vec::new();

    let names = [
        "differentiation oracle",
        "ABIF exactness on a linear-softmax Hessian",
        "TracIn single checkpoint",
        "synthetic-noise recall",
        "stability across batch/order/init",
        "capacity sensitivity",
        "churn worked example",
        "bandit sanity",
        "AutoCL vs filtering (30% noise)",
        "per-bucket isolation",
        "clean-data null result",
        "difficulty signals",
    ];
    for (i, name) in names.iter().enumerate() {
        let id = i as u32 + 1;
        let t = Instant::now();
        let result = match id {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(noisy.get_or_insert_with(|| noisy_runs(root))),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => criterion_7(),
            8 => criterion_8(),
            9 => criterion_9(root),
            10 => criterion_10(noisy.get_or_insert_with(|| noisy_runs(root))),
            11 => criterion_11(root),
            12 => criterion_12(),
            _ => unreachable!(),
        };
        let status = if result.pass { "PASS" } else { "FAIL" };
        let note = match (result.pass, KNOWN_RED.contains(&id)) {
            (false, true) => " [known red]",
            (true, true) => " [listed as known red but passed]",
            _ => "",
        };
        println!(
            "{status} criterion {id:>2} {name}: {} ({:.1}s){note}",
            result.detail,
            t.elapsed().as_secs_f64()
        );
        if !result.pass {
            if KNOWN_RED.contains(&id) {
                known.push(id);
            } else {
                failed.push(id);
            }
        }
    }
    let passed = names.len() - failed.len() - known.len();
    println!(
        "acceptance: {passed}/{} pass; unexpected failures {failed:?}; known red {known:?}; {:.0}s total",
        names.len(),
        start.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
